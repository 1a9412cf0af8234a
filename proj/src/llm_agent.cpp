#include "lacer/llm_agent.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <fmt/format.h>

#include "lacer/response_parser.hpp"

namespace lacer {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw Error(fmt::format("unknown message role '{}'", s));
}

namespace {

SectionTag tag_for_title(std::string_view title) {
  if (title == section_title::task_description) return SectionTag::task_description;
  if (title == section_title::search_space) return SectionTag::search_space;
  if (title == section_title::initial_architecture) return SectionTag::initial_architecture;
  if (title == section_title::initial_performance) return SectionTag::performance_signals;
  if (title == section_title::candidate_performance) return SectionTag::performance_signals;
  if (title == section_title::request) return SectionTag::request;
  return SectionTag::untagged;
}

std::string trim_trailing(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ' || s.back() == '\r' || s.back() == '\t'))
    s.pop_back();
  return s;
}

std::string trim_leading_blank_lines(std::string_view s) {
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto eol = s.find('\n', pos);
    const auto line = s.substr(pos, eol == std::string_view::npos ? s.size() - pos : eol - pos);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) break;
    if (eol == std::string_view::npos) return {};
    pos = eol + 1;
  }
  return std::string(s.substr(pos));
}

Section make_section(std::string_view title, std::string body) {
  return Section{tag_for_title(title), std::string(title), trim_trailing(std::move(body))};
}

}  // namespace

std::vector<Section> split_sections(std::string_view content) {
  std::vector<Section> sections;
  Section current;
  bool headed = false;
  auto flush = [&] {
    current.body = trim_trailing(trim_leading_blank_lines(current.body));
    if (headed || !current.body.empty()) sections.push_back(std::move(current));
    current = Section{};
  };
  std::size_t pos = 0;
  while (true) {
    const auto eol = content.find('\n', pos);
    const auto line = content.substr(pos, eol == std::string_view::npos ? content.size() - pos : eol - pos);
    if (line.starts_with("### ")) {
      flush();
      current.title = std::string(line.substr(4));
      current.tag = tag_for_title(current.title);
      headed = true;
    } else {
      current.body += line;
      current.body += '\n';
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  flush();
  return sections;
}

std::string join_sections(const std::vector<Section>& sections) {
  std::string out;
  for (const auto& s : sections) {
    if (!out.empty()) out += "\n\n";
    if (s.tag != SectionTag::untagged || !s.title.empty()) out += fmt::format("### {}\n", s.title);
    out += s.body;
  }
  return out;
}

bool is_retained(SectionTag tag) {
  switch (tag) {
    case SectionTag::task_description:
    case SectionTag::search_space:
    case SectionTag::initial_architecture:
    case SectionTag::performance_signals:
      return true;
    default:
      return false;
  }
}

std::string default_system_prompt() {
  return "You are a neural architecture design agent for deep reinforcement learning. You design "
         "composite state encoders: one encoder module per observation source plus a fusion module "
         "that combines their outputs into the state used by the policy. You propose architectures "
         "strictly within the given search space, learn from the reported performance of earlier "
         "candidates, and answer in the requested format.";
}

std::string render_search_space(const CompositeSpace& space) {
  std::string out;
  for (const auto& m : space.modules()) {
    if (!out.empty()) out += '\n';
    out += fmt::format("module {} ({})\n", m.name, m.family.empty() ? "unspecified" : m.family);
    for (const auto& c : m.choices) {
      std::string values;
      for (const auto& v : c.domain.values) values += (values.empty() ? "" : ", ") + value_to_string(v);
      out += fmt::format("- {}: one of {{{}}}", c.name, values);
      if (c.dependency) out += fmt::format("; must be <= {}", c.dependency->sibling);
      out += '\n';
    }
  }
  return trim_trailing(std::move(out));
}

std::string render_request(std::size_t k, const CompositeSpace& space) {
  return fmt::format(
      "Propose exactly {} new architecture{}. Start each architecture with a line containing only "
      "\"{}\", followed by one line per module in the form \"module: choice: value, choice: value, "
      "...\". Use only values listed in the search space. Aim to maximize the {}.",
      k, k == 1 ? "" : "s", kArchitecturePrefix, space.task_metric());
}

PromptParts make_prompt_parts(const CompositeSpace& space, std::size_t k) {
  PromptParts parts;
  parts.system_prompt = default_system_prompt();
  parts.task_description = space.task_description();
  parts.search_space_text = render_search_space(space);
  parts.request = render_request(k, space);
  if (space.has_defaults()) parts.initial_architecture = expert_default(space);
  return parts;
}

std::string render_performance(const SignalSet& s, const FeedbackOptions& options, std::string_view metric_name) {
  std::string out = fmt::format("task metric ({}): {:.3f}", metric_name, s.task_metric);
  if (s.failed) out += "\nstatus: training failed";
  if (options.average_reward) out += fmt::format("\naverage reward: {:.3f}", s.average_reward);
  if (options.feature_info)
    for (const auto& p : s.feature_info)
      out += fmt::format("\nfeature information ({}): mutual information {:.3f}, redundancy {:.3f}", p.name,
                         p.mutual_information, p.redundancy);
  return out;
}

std::vector<Message> build_initial_prompt(const PromptParts& parts, const CompositeSpace& space,
                                          const FeedbackOptions& options) {
  if (parts.system_prompt.empty()) throw ConfigError("prompt part missing: system prompt");
  if (parts.task_description.empty()) throw ConfigError("prompt part missing: task description");
  if (parts.search_space_text.empty()) throw ConfigError("prompt part missing: search space");
  if (parts.request.empty()) throw ConfigError("prompt part missing: request");
  if (options.initial_evaluation && parts.initial_architecture && !parts.initial_performance)
    throw ConfigError("prompt part missing: initial performance");

  std::vector<Section> sections;
  sections.push_back(make_section(section_title::task_description, parts.task_description));
  sections.push_back(make_section(section_title::search_space, parts.search_space_text));
  if (parts.initial_architecture)
    sections.push_back(make_section(section_title::initial_architecture,
                                    render_design_lines(*parts.initial_architecture, space)));
  if (options.initial_evaluation && parts.initial_performance)
    sections.push_back(make_section(section_title::initial_performance,
                                    render_performance(*parts.initial_performance, options, space.task_metric())));
  sections.push_back(make_section(section_title::request, parts.request));
  return {Message{Role::system, parts.system_prompt}, Message{Role::user, join_sections(sections)}};
}

Message build_feedback_message(std::span<const SignalSet> previous, std::string_view search_space_text,
                               std::string_view request, const FeedbackOptions& options,
                               std::string_view metric_name) {
  std::string body;
  for (std::size_t i = 0; i < previous.size(); ++i) {
    if (i > 0) body += "\n\n";
    body += fmt::format("Candidate {}/{}\n{}", i + 1, previous.size(),
                        render_performance(previous[i], options, metric_name));
  }
  std::vector<Section> sections;
  if (!previous.empty()) sections.push_back(make_section(section_title::candidate_performance, body));
  sections.push_back(make_section(section_title::search_space, std::string(search_space_text)));
  sections.push_back(make_section(section_title::request, std::string(request)));
  return Message{Role::user, join_sections(sections)};
}

std::vector<Message> build_iteration_prompt(const ConversationHistory& history,
                                            std::span<const SignalSet> previous,
                                            std::string_view search_space_text, std::string_view request,
                                            const FeedbackOptions& options, std::string_view metric_name) {
  if (history.empty()) throw ConfigError("iteration prompt needs a nonempty history");
  auto messages = prune_history(history).messages;
  messages.push_back(build_feedback_message(previous, search_space_text, request, options, metric_name));
  return messages;
}

std::vector<std::string> architecture_blocks(std::string_view content) {
  std::vector<std::string> out;
  for (const auto& raw : extract_after_prefix(content, kArchitecturePrefix)) {
    // Prefix line, then the first run of non-blank lines.
    const auto first_eol = raw.find('\n');
    std::string block = raw.substr(0, first_eol);
    if (first_eol != std::string::npos) {
      const auto rest = trim_leading_blank_lines(std::string_view(raw).substr(first_eol + 1));
      const auto blank = rest.find("\n\n");
      auto body = trim_trailing(rest.substr(0, blank));
      // A blank line made of spaces also ends the block.
      std::string kept;
      std::size_t pos = 0;
      while (pos < body.size()) {
        const auto eol = body.find('\n', pos);
        const auto line = body.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        if (line.find_first_not_of(" \t\r") == std::string::npos) break;
        kept += (kept.empty() ? "" : "\n") + line;
        if (eol == std::string::npos) break;
        pos = eol + 1;
      }
      if (!kept.empty()) block += "\n" + kept;
    }
    out.push_back(trim_trailing(std::move(block)));
  }
  return out;
}

ConversationHistory prune_history(const ConversationHistory& history) {
  ConversationHistory out;
  std::vector<std::string> seen_task;
  std::vector<std::string> seen_space;
  for (const auto& m : history.messages) {
    switch (m.role) {
      case Role::system:
        out.messages.push_back(m);
        break;
      case Role::user: {
        std::vector<Section> kept;
        for (auto& s : split_sections(m.content)) {
          if (!is_retained(s.tag)) continue;
          auto* seen = s.tag == SectionTag::task_description ? &seen_task
                       : s.tag == SectionTag::search_space   ? &seen_space
                                                             : nullptr;
          if (seen) {
            if (std::find(seen->begin(), seen->end(), s.body) != seen->end()) continue;
            seen->push_back(s.body);
          }
          kept.push_back(std::move(s));
        }
        if (!kept.empty()) out.messages.push_back(Message{Role::user, join_sections(kept)});
        break;
      }
      case Role::assistant: {
        std::string content;
        for (const auto& b : architecture_blocks(m.content)) content += (content.empty() ? "" : "\n\n") + b;
        if (!content.empty()) out.messages.push_back(Message{Role::assistant, std::move(content)});
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::mock: return "mock";
    case BackendKind::replay: return "replay";
    case BackendKind::http: return "http";
  }
  return "mock";
}

BackendKind backend_from_string(std::string_view s) {
  if (s == "mock") return BackendKind::mock;
  if (s == "replay") return BackendKind::replay;
  if (s == "http") return BackendKind::http;
  throw ConfigError(fmt::format("unknown LLM backend '{}'", s));
}

void AgentConfig::check() const {
  if (!(temperature >= 0.0 && temperature <= 2.0)) throw ConfigError("temperature must lie in [0, 2]");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (backend == BackendKind::replay && transcript_path.empty())
    throw ConfigError("replay backend needs a transcript path");
  if (backend == BackendKind::http && endpoint.empty()) throw ConfigError("http backend needs an endpoint URL");
}

ReplayBackend::ReplayBackend(std::vector<std::string> responses) : responses_(std::move(responses)) {}

ReplayBackend ReplayBackend::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open transcript '{}'", path));
  std::vector<std::string> responses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      responses.push_back(nlohmann::json::parse(line).at("response").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("transcript '{}' line {}: {}", path, line_no, e.what()));
    }
  }
  return ReplayBackend(std::move(responses));
}

std::string ReplayBackend::complete(std::span<const Message>, const AgentConfig&) {
  if (next_ >= responses_.size())
    throw TranscriptExhausted(fmt::format("replay transcript exhausted after {} responses", responses_.size()));
  return responses_[next_++];
}

std::unique_ptr<LlmBackend> make_backend(const AgentConfig& config, const CompositeSpace& space) {
  config.check();
  switch (config.backend) {
    case BackendKind::mock:
      return std::make_unique<MockBackend>(space, config.seed);
    case BackendKind::replay:
      return std::make_unique<ReplayBackend>(ReplayBackend::from_file(config.transcript_path));
    case BackendKind::http: {
      const char* key = std::getenv(kApiKeyVariable);
      if (key == nullptr || *key == '\0') throw ConfigError(fmt::format("{} is not set", kApiKeyVariable));
      return std::make_unique<HttpBackend>(config.endpoint, key);
    }
  }
  throw ConfigError("unknown backend");
}

std::string query(LlmBackend& backend, std::span<const Message> messages, const AgentConfig& config) {
  if (messages.empty()) throw Error("query needs at least one message");
  for (const auto& m : messages)
    if (m.content.empty()) throw Error("query: message content must be nonempty");
  return backend.complete(messages, config);
}

std::uint64_t message_digest(std::span<const Message> messages) {
  std::uint64_t h = fnv1a("lacer-messages");
  for (const auto& m : messages) {
    h = fnv1a(to_string(m.role), h);
    h = fnv1a(std::string_view("\x1f", 1), h);
    h = fnv1a(m.content, h);
    h = fnv1a(std::string_view("\x1e", 1), h);
  }
  return h;
}

// ---------------------------------------------------------------------------

DesignAgent::DesignAgent(const CompositeSpace& space, FeedbackOptions options, std::string system_prompt)
    : space_(&space), options_(options), system_prompt_(std::move(system_prompt)) {}

std::vector<Message> DesignAgent::prompt(std::size_t k, const std::optional<Evaluation>& initial,
                                         std::span<const SignalSet> previous) {
  const auto request = render_request(k, *space_);
  if (history_.empty()) {
    auto parts = make_prompt_parts(*space_, k);
    parts.system_prompt = system_prompt_;
    if (initial) {
      parts.initial_architecture = initial->design;
      parts.initial_performance = initial->signals;
    }
    pending_ = build_initial_prompt(parts, *space_, options_);
    return pending_;
  }
  auto messages = build_iteration_prompt(history_, previous, render_search_space(*space_), request, options_,
                                         space_->task_metric());
  pending_ = {messages.back()};
  return messages;
}

void DesignAgent::commit(std::string assistant_content) {
  if (pending_.empty()) throw Error("commit without a pending prompt");
  for (auto& m : pending_) history_.messages.push_back(std::move(m));
  pending_.clear();
  history_.messages.push_back(Message{Role::assistant, std::move(assistant_content)});
}

}  // namespace lacer
