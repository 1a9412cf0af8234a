#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lacer/evaluation.hpp"
#include "lacer/search_space.hpp"
#include "lacer/signals.hpp"

namespace lacer {

enum class Role { system, user, assistant };
std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct Message {
  Role role = Role::user;
  std::string content;

  bool operator==(const Message&) const = default;
};

/// Content categories of user-message sections. Only the retained tags
/// survive pruning.
enum class SectionTag {
  task_description,
  search_space,
  initial_architecture,
  performance_signals,
  request,
  untagged,
};

struct Section {
  SectionTag tag = SectionTag::untagged;
  std::string title;
  std::string body;
};

/// Splits a message into `### Title` sections; text before the first header
/// becomes an untagged section.
std::vector<Section> split_sections(std::string_view content);
std::string join_sections(const std::vector<Section>& sections);
bool is_retained(SectionTag tag);

namespace section_title {
inline constexpr std::string_view task_description = "Task Description";
inline constexpr std::string_view search_space = "Search Space";
inline constexpr std::string_view initial_architecture = "Initial Architecture";
inline constexpr std::string_view initial_performance = "Initial Performance";
inline constexpr std::string_view candidate_performance = "Candidate Performance";
inline constexpr std::string_view request = "Request";
}  // namespace section_title

struct ConversationHistory {
  std::vector<Message> messages;

  bool empty() const noexcept { return messages.empty(); }
  bool operator==(const ConversationHistory&) const = default;
};

/// Which feedback reaches the agent. Each flag off removes exactly its part
/// of the prompt.
struct FeedbackOptions {
  bool feature_info = true;        // FI
  bool average_reward = true;      // RI
  bool initial_evaluation = true;  // IE
};

/// Version of the fixed system/request templates below.
inline constexpr std::string_view kPromptTemplateVersion = "lacer-prompts/1";

std::string default_system_prompt();
std::string render_search_space(const CompositeSpace& space);
std::string render_request(std::size_t k, const CompositeSpace& space);

struct PromptParts {
  std::string system_prompt;
  std::string task_description;
  std::string search_space_text;
  std::string request;
  std::optional<DesignVector> initial_architecture;
  std::optional<SignalSet> initial_performance;
};

/// Builds the standard parts for a space: templates, rendered space, and the
/// expert default as the initial architecture when the space declares one.
PromptParts make_prompt_parts(const CompositeSpace& space, std::size_t k);

/// Labeled lines: task metric, average reward, then one line per feature pair.
std::string render_performance(const SignalSet& s, const FeedbackOptions& options,
                               std::string_view metric_name = "task metric");

/// [system, user] per the first-iteration template. Throws ConfigError on a
/// missing part.
std::vector<Message> build_initial_prompt(const PromptParts& parts, const CompositeSpace& space,
                                          const FeedbackOptions& options);

/// The user message that reports one batch of results.
Message build_feedback_message(std::span<const SignalSet> previous, std::string_view search_space_text,
                               std::string_view request, const FeedbackOptions& options,
                               std::string_view metric_name = "task metric");

/// prune(history) followed by the feedback message. Throws ConfigError on an
/// empty history.
std::vector<Message> build_iteration_prompt(const ConversationHistory& history,
                                            std::span<const SignalSet> previous,
                                            std::string_view search_space_text, std::string_view request,
                                            const FeedbackOptions& options,
                                            std::string_view metric_name = "task metric");

/// Keeps system messages, the retained sections of user messages (repeated
/// task/space sections only once), and the architecture blocks of assistant
/// messages. Idempotent and order-preserving.
ConversationHistory prune_history(const ConversationHistory& history);

/// Architecture blocks of an assistant message, with trailing commentary cut.
std::vector<std::string> architecture_blocks(std::string_view content);

// ---------------------------------------------------------------------------
// Backends

enum class BackendKind { mock, replay, http };
std::string_view to_string(BackendKind k);
BackendKind backend_from_string(std::string_view s);

struct AgentConfig {
  BackendKind backend = BackendKind::mock;
  std::string model_id = "claude-sonnet-4";
  double temperature = 1.0;
  std::size_t batch_size = 1;
  std::size_t max_parse_retries = 2;
  std::string endpoint;         // http backend
  std::string transcript_path;  // replay backend
  std::uint64_t seed = 0;       // mock backend

  void check() const;  // throws ConfigError
};

inline constexpr const char* kApiKeyVariable = "LACER_LLM_API_KEY";

class TransportError : public Error {
 public:
  using Error::Error;
};

class TranscriptExhausted : public Error {
 public:
  using Error::Error;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string complete(std::span<const Message> messages, const AgentConfig& config) = 0;
};

/// Deterministic stand-in for a language model: a pure function of the
/// message digest and its seed. It reads the architectures and feedback in the
/// conversation and proposes the requested number of blocks, steering toward
/// values with better reported performance.
class MockBackend : public LlmBackend {
 public:
  MockBackend(CompositeSpace space, std::uint64_t seed);
  std::string complete(std::span<const Message> messages, const AgentConfig& config) override;

 private:
  CompositeSpace space_;
  std::uint64_t seed_;
};

/// Returns the responses of a JSON Lines transcript (`{"response": ...}`) in order.
class ReplayBackend : public LlmBackend {
 public:
  explicit ReplayBackend(std::vector<std::string> responses);
  static ReplayBackend from_file(const std::string& path);
  std::string complete(std::span<const Message> messages, const AgentConfig& config) override;
  std::size_t remaining() const noexcept { return responses_.size() - next_; }

 private:
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
};

/// One chat-completion round trip per call: POST `{model, temperature,
/// messages}` to the endpoint, text taken from the first choice.
class HttpBackend : public LlmBackend {
 public:
  HttpBackend(std::string endpoint, std::string api_key);
  std::string complete(std::span<const Message> messages, const AgentConfig& config) override;

  static nlohmann::json request_body(std::span<const Message> messages, const AgentConfig& config);
  static std::string response_text(const nlohmann::json& body);

 private:
  std::string endpoint_;
  std::string api_key_;
};

/// Reads the API key from the environment for the http backend.
std::unique_ptr<LlmBackend> make_backend(const AgentConfig& config, const CompositeSpace& space);

/// Validates the messages and forwards to the backend.
std::string query(LlmBackend& backend, std::span<const Message> messages, const AgentConfig& config);

/// Digest of a message list; the mock backend seeds itself from it.
std::uint64_t message_digest(std::span<const Message> messages);

// ---------------------------------------------------------------------------

/// Drives the prompt side of the design loop: first prompt from the parts,
/// later prompts from the pruned history plus batch feedback.
class DesignAgent {
 public:
  DesignAgent(const CompositeSpace& space, FeedbackOptions options, std::string system_prompt = default_system_prompt());

  /// Messages to send for a batch of k. `initial` is the expert evaluation
  /// (first call only); `previous` the results of the last committed batch.
  std::vector<Message> prompt(std::size_t k, const std::optional<Evaluation>& initial,
                              std::span<const SignalSet> previous);

  /// Appends the pending user message (and the system message on the first
  /// exchange) plus the assistant reply to the history.
  void commit(std::string assistant_content);

  const ConversationHistory& history() const noexcept { return history_; }
  const FeedbackOptions& options() const noexcept { return options_; }

 private:
  const CompositeSpace* space_;
  FeedbackOptions options_;
  std::string system_prompt_;
  ConversationHistory history_;
  std::vector<Message> pending_;
};

}  // namespace lacer
