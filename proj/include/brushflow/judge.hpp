#pragma once

// Pairwise judge panel: randomized A/B tasks, endpoint adapters (HTTP and
// mocks), verdict parsing and win-rate aggregation.

#include "httplib.h"
#include "json.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace brushflow::judge {

namespace fs = std::filesystem;
using nlohmann::json;

enum class Criterion { flow_alignment, materiality, aesthetics };
inline constexpr std::array<Criterion, 3> kCriteria = {Criterion::flow_alignment, Criterion::materiality,
                                                       Criterion::aesthetics};

inline const char* key(Criterion c) {
  switch (c) {
    case Criterion::flow_alignment: return "flow_alignment";
    case Criterion::materiality: return "materiality";
    case Criterion::aesthetics: return "aesthetics";
  }
  return "?";
}

inline const char* label(Criterion c) {
  switch (c) {
    case Criterion::flow_alignment: return "Flow Alignment";
    case Criterion::materiality: return "Materiality";
    case Criterion::aesthetics: return "Aesthetics";
  }
  return "?";
}

enum class Slot { A, B };
/// AB: candidate shown as A. BA: candidate shown as B.
enum class Order { AB, BA };

inline const char* to_string(Slot s) { return s == Slot::A ? "A" : "B"; }
inline const char* to_string(Order o) { return o == Order::AB ? "AB" : "BA"; }

class TaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport or credential failure talking to a judge.
class EndpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reply that does not follow the rubric's output format.
class ProtocolViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Tasks

struct ImagePair {
  std::string pair_id;
  fs::path candidate;
  fs::path baseline;
  fs::path style_reference;
};

struct ComparisonTask {
  std::string pair_id;
  fs::path image_a_path;
  fs::path image_b_path;
  Order presentation_order = Order::AB;
  fs::path style_reference_path;

  [[nodiscard]] Slot candidate_slot() const { return presentation_order == Order::AB ? Slot::A : Slot::B; }
};

inline std::vector<ComparisonTask> build_tasks(const std::vector<ImagePair>& pairs, std::uint64_t seed) {
  std::vector<std::string> missing;
  for (const ImagePair& p : pairs)
    for (const fs::path* f : {&p.candidate, &p.baseline, &p.style_reference})
      if (!fs::is_regular_file(*f)) missing.push_back(f->string());
  if (!missing.empty()) {
    std::string msg = "missing image files:";
    for (const std::string& m : missing) msg += "\n  " + m;
    throw TaskError(msg);
  }
  std::mt19937_64 rng(seed);
  std::vector<ComparisonTask> tasks;
  tasks.reserve(pairs.size());
  for (const ImagePair& p : pairs) {
    ComparisonTask t;
    t.pair_id = p.pair_id;
    t.presentation_order = (rng() & 1) ? Order::BA : Order::AB;
    t.image_a_path = t.presentation_order == Order::AB ? p.candidate : p.baseline;
    t.image_b_path = t.presentation_order == Order::AB ? p.baseline : p.candidate;
    t.style_reference_path = p.style_reference;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Verdicts

struct CriterionVerdict {
  Slot winner = Slot::A;
  double score_a = 0.0;
  double score_b = 0.0;
};

enum class VerdictStatus { ok, failure, protocol_violation };

inline const char* to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::ok: return "ok";
    case VerdictStatus::failure: return "failure";
    case VerdictStatus::protocol_violation: return "protocol_violation";
  }
  return "?";
}

struct ParsedReply {
  std::array<CriterionVerdict, 3> criteria{};
  double authenticity_a = 0.0;
  double authenticity_b = 0.0;
};

struct JudgeVerdict {
  std::string pair_id;
  std::string judge_name;
  VerdictStatus status = VerdictStatus::ok;
  std::string cause;
  Order presentation_order = Order::AB;
  std::array<CriterionVerdict, 3> criteria{};
  double authenticity_a = 0.0;
  double authenticity_b = 0.0;
  std::vector<std::string> raw_responses;

  [[nodiscard]] bool valid() const { return status == VerdictStatus::ok; }
  [[nodiscard]] Slot candidate_slot() const { return presentation_order == Order::AB ? Slot::A : Slot::B; }
  [[nodiscard]] const CriterionVerdict& at(Criterion c) const { return criteria[static_cast<int>(c)]; }
  [[nodiscard]] bool candidate_won(Criterion c) const { return at(c).winner == candidate_slot(); }
  [[nodiscard]] double candidate_score(Criterion c) const {
    return candidate_slot() == Slot::A ? at(c).score_a : at(c).score_b;
  }
  [[nodiscard]] double baseline_score(Criterion c) const {
    return candidate_slot() == Slot::A ? at(c).score_b : at(c).score_a;
  }
  [[nodiscard]] double candidate_authenticity() const {
    return candidate_slot() == Slot::A ? authenticity_a : authenticity_b;
  }
  [[nodiscard]] double baseline_authenticity() const {
    return candidate_slot() == Slot::A ? authenticity_b : authenticity_a;
  }

  [[nodiscard]] json to_json() const {
    json j = {{"pair_id", pair_id},
              {"judge", judge_name},
              {"status", to_string(status)},
              {"presentation_order", to_string(presentation_order)},
              {"raw_responses", raw_responses}};
    if (!cause.empty()) j["cause"] = cause;
    if (valid()) {
      for (Criterion c : kCriteria)
        j[key(c)] = {{"winner", to_string(at(c).winner)}, {"score_a", at(c).score_a}, {"score_b", at(c).score_b}};
      j["authenticity_a"] = authenticity_a;
      j["authenticity_b"] = authenticity_b;
    }
    return j;
  }
};

namespace detail {

inline double score_field(const json& j, const char* name, const std::string& where) {
  if (!j.contains(name)) throw ProtocolViolation(where + ": missing '" + name + "'");
  const json& v = j.at(name);
  if (!v.is_number()) throw ProtocolViolation(where + ": '" + name + "' is not a number");
  const double s = v.get<double>();
  if (!(s >= 1.0 && s <= 10.0)) throw ProtocolViolation(where + ": '" + name + "' outside [1, 10]");
  return s;
}

}  // namespace detail

/// Reads the fenced ```json block of a judge reply. Free text is rejected.
inline ParsedReply parse_reply(const std::string& text) {
  static const std::regex fence(R"(```json[ \t]*\r?\n([\s\S]*?)```)");
  std::smatch m;
  if (!std::regex_search(text, m, fence)) throw ProtocolViolation("no fenced json block in reply");
  json j;
  try {
    j = json::parse(m[1].str());
  } catch (const json::parse_error& e) {
    throw ProtocolViolation(std::string("fenced block is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolViolation("fenced block is not a JSON object");
  ParsedReply r;
  for (Criterion c : kCriteria) {
    if (!j.contains(key(c)) || !j.at(key(c)).is_object())
      throw ProtocolViolation(std::string("missing criterion '") + key(c) + "'");
    const json& cj = j.at(key(c));
    const std::string w = cj.value("winner", std::string());
    CriterionVerdict& v = r.criteria[static_cast<int>(c)];
    if (w == "A") {
      v.winner = Slot::A;
    } else if (w == "B") {
      v.winner = Slot::B;
    } else {
      throw ProtocolViolation(std::string(key(c)) + ": winner must be \"A\" or \"B\", got \"" + w + "\"");
    }
    v.score_a = detail::score_field(cj, "score_a", key(c));
    v.score_b = detail::score_field(cj, "score_b", key(c));
  }
  r.authenticity_a = detail::score_field(j, "authenticity_a", "reply");
  r.authenticity_b = detail::score_field(j, "authenticity_b", "reply");
  return r;
}

inline std::string format_reply(const ParsedReply& r) {
  json j;
  for (Criterion c : kCriteria) {
    const CriterionVerdict& v = r.criteria[static_cast<int>(c)];
    j[key(c)] = {{"winner", to_string(v.winner)}, {"score_a", v.score_a}, {"score_b", v.score_b}};
  }
  j["authenticity_a"] = r.authenticity_a;
  j["authenticity_b"] = r.authenticity_b;
  return "```json\n" + j.dump(2) + "\n```\n";
}

// ---------------------------------------------------------------------------
// Endpoints

class JudgeEndpoint {
 public:
  virtual ~JudgeEndpoint() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  /// Returns the raw reply text. Throws EndpointError on transport problems.
  /// Must be safe to call concurrently.
  virtual std::string submit(const ComparisonTask& task, const std::string& rubric) const = 0;
};

inline constexpr const char* kRubricFile = "judge_rubric_v1.txt";

inline std::string load_rubric(const fs::path& path = fs::path(BRUSHFLOW_ASSET_DIR) / kRubricFile) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read rubric " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

namespace mock {

/// Always prefers whatever is shown in slot A.
class AlwaysA : public JudgeEndpoint {
 public:
  explicit AlwaysA(std::string name = "mock-always-a") : name_(std::move(name)) {}
  [[nodiscard]] std::string name() const override { return name_; }
  std::string submit(const ComparisonTask&, const std::string&) const override {
    ParsedReply r;
    for (CriterionVerdict& v : r.criteria) v = {Slot::A, 8.0, 6.0};
    r.authenticity_a = 7.0;
    r.authenticity_b = 5.0;
    return format_reply(r);
  }

 private:
  std::string name_;
};

/// Independent coin per (pair, criterion), seeded; scores follow the winner.
class FairCoin : public JudgeEndpoint {
 public:
  explicit FairCoin(std::uint64_t seed, std::string name = "mock-fair-coin") : seed_(seed), name_(std::move(name)) {}
  [[nodiscard]] std::string name() const override { return name_; }
  std::string submit(const ComparisonTask& task, const std::string&) const override {
    ParsedReply r;
    const std::uint64_t base = fnv1a(task.pair_id, splitmix64(seed_));
    for (Criterion c : kCriteria) {
      const bool a = splitmix64(base + static_cast<std::uint64_t>(c)) & 1;
      r.criteria[static_cast<int>(c)] = {a ? Slot::A : Slot::B, a ? 7.0 : 6.0, a ? 6.0 : 7.0};
    }
    r.authenticity_a = 6.0;
    r.authenticity_b = 6.0;
    return format_reply(r);
  }

 private:
  std::uint64_t seed_;
  std::string name_;
};

/// Scores each image by a hash of its file name, so verdicts depend only on
/// which files sit in which slot.
class FilenameHash : public JudgeEndpoint {
 public:
  explicit FilenameHash(std::string name = "mock-filename-hash") : name_(std::move(name)) {}
  [[nodiscard]] std::string name() const override { return name_; }
  std::string submit(const ComparisonTask& task, const std::string&) const override {
    const std::string fa = task.image_a_path.filename().string();
    const std::string fb = task.image_b_path.filename().string();
    auto score = [](const std::string& file, std::string_view what) {
      return 1.0 + static_cast<double>(fnv1a(what, fnv1a(file)) % 10);
    };
    ParsedReply r;
    for (Criterion c : kCriteria) {
      const double sa = score(fa, key(c));
      const double sb = score(fb, key(c));
      const Slot w = sa != sb ? (sa > sb ? Slot::A : Slot::B) : (fnv1a(fa) >= fnv1a(fb) ? Slot::A : Slot::B);
      r.criteria[static_cast<int>(c)] = {w, sa, sb};
    }
    r.authenticity_a = score(fa, "authenticity");
    r.authenticity_b = score(fb, "authenticity");
    return format_reply(r);
  }

 private:
  std::string name_;
};

/// Endpoint that is always down.
class Unreachable : public JudgeEndpoint {
 public:
  explicit Unreachable(std::string name = "mock-unreachable") : name_(std::move(name)) {}
  [[nodiscard]] std::string name() const override { return name_; }
  std::string submit(const ComparisonTask&, const std::string&) const override {
    throw EndpointError("connection refused");
  }

 private:
  std::string name_;
};

}  // namespace mock

inline std::string base64(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string data_url(const fs::path& image) {
  std::ifstream in(image, std::ios::binary);
  if (!in) throw EndpointError("cannot read " + image.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string ext = image.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  const char* mime = (ext == ".jpg" || ext == ".jpeg") ? "image/jpeg" : "image/png";
  return std::string("data:") + mime + ";base64," + base64(ss.str());
}

struct EndpointConfig {
  std::string name;
  std::string endpoint_url;
  std::string model_id;
  std::string credential_env_var;
  double timeout_s = 60.0;
  std::string mock;  // non-empty selects a built-in mock instead of HTTP
  std::uint64_t mock_seed = 0;
};

/// OpenAI-style chat-completions adapter.
class HttpChatJudge : public JudgeEndpoint {
 public:
  explicit HttpChatJudge(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg_.endpoint_url, m, url))
      throw std::invalid_argument("judge '" + cfg_.name + "': bad endpoint_url '" + cfg_.endpoint_url + "'");
    origin_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/";
  }

  [[nodiscard]] std::string name() const override { return cfg_.name; }

  [[nodiscard]] json request_body(const ComparisonTask& task, const std::string& rubric) const {
    json content = json::array();
    auto image = [&](const std::string& caption, const fs::path& p) {
      content.push_back({{"type", "text"}, {"text", caption}});
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(p)}}}});
    };
    image("Style reference:", task.style_reference_path);
    image("Image A:", task.image_a_path);
    image("Image B:", task.image_b_path);
    return {{"model", cfg_.model_id},
            {"temperature", 0},
            {"messages",
             json::array({{{"role", "system"}, {"content", rubric}}, {{"role", "user"}, {"content", content}}})}};
  }

  std::string submit(const ComparisonTask& task, const std::string& rubric) const override {
    httplib::Headers headers;
    if (!cfg_.credential_env_var.empty()) {
      const char* key = std::getenv(cfg_.credential_env_var.c_str());
      if (key == nullptr || *key == '\0')
        throw EndpointError("auth: environment variable " + cfg_.credential_env_var + " is not set");
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    httplib::Client client(origin_);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const auto res = client.Post(path_, headers, request_body(task, rubric).dump(), "application/json");
    if (!res) throw EndpointError("transport: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403)
      throw EndpointError("auth: HTTP " + std::to_string(res->status));
    if (res->status != 200) throw EndpointError("HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      const json j = json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      // The envelope itself is malformed; hand the body to the verdict parser
      // so it is archived and counted as a protocol violation.
      return res->body;
    }
  }

 private:
  EndpointConfig cfg_;
  std::string origin_;
  std::string path_;
};

inline std::unique_ptr<JudgeEndpoint> make_endpoint(const EndpointConfig& cfg) {
  if (cfg.mock.empty()) return std::make_unique<HttpChatJudge>(cfg);
  if (cfg.mock == "always_a") return std::make_unique<mock::AlwaysA>(cfg.name);
  if (cfg.mock == "fair_coin") return std::make_unique<mock::FairCoin>(cfg.mock_seed, cfg.name);
  if (cfg.mock == "filename_hash") return std::make_unique<mock::FilenameHash>(cfg.name);
  if (cfg.mock == "unreachable") return std::make_unique<mock::Unreachable>(cfg.name);
  throw std::invalid_argument("judge '" + cfg.name + "': unknown mock '" + cfg.mock + "'");
}

/// Judge config: a JSON list of {name, endpoint_url, model_id,
/// credential_env_var, timeout_s}, or {name, mock[, seed]} for built-in mocks.
inline std::vector<EndpointConfig> parse_judge_config(const json& j) {
  if (!j.is_array()) throw std::invalid_argument("judge config must be a JSON list");
  static const std::vector<std::string> allowed = {"name",       "endpoint_url", "model_id", "credential_env_var",
                                                   "timeout_s", "mock",         "seed"};
  std::vector<EndpointConfig> out;
  for (const json& e : j) {
    if (!e.is_object()) throw std::invalid_argument("judge config entries must be objects");
    for (const auto& [k, v] : e.items())
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        throw std::invalid_argument("judge config: unknown key '" + k + "'");
    EndpointConfig c;
    c.name = e.at("name").get<std::string>();
    c.mock = e.value("mock", std::string());
    c.mock_seed = e.value("seed", std::uint64_t{0});
    if (c.mock.empty()) {
      c.endpoint_url = e.at("endpoint_url").get<std::string>();
      c.model_id = e.at("model_id").get<std::string>();
      c.credential_env_var = e.value("credential_env_var", std::string());
      c.timeout_s = e.value("timeout_s", 60.0);
      if (!(c.timeout_s > 0.0)) throw std::invalid_argument("judge '" + c.name + "': timeout_s must be positive");
    }
    for (const EndpointConfig& prev : out)
      if (prev.name == c.name) throw std::invalid_argument("duplicate judge name '" + c.name + "'");
    out.push_back(std::move(c));
  }
  if (out.empty()) throw std::invalid_argument("judge config lists no judges");
  return out;
}

// ---------------------------------------------------------------------------
// Panel

struct PanelSettings {
  int max_retries = 3;
  int max_in_flight = 4;
};

inline JudgeVerdict judge_one(const ComparisonTask& task, const JudgeEndpoint& judge, const std::string& rubric,
                              const PanelSettings& settings) {
  JudgeVerdict v;
  v.pair_id = task.pair_id;
  v.judge_name = judge.name();
  v.presentation_order = task.presentation_order;
  for (int attempt = 0; attempt <= settings.max_retries; ++attempt) {
    try {
      std::string reply = judge.submit(task, rubric);
      v.raw_responses.push_back(reply);
      const ParsedReply r = parse_reply(reply);
      v.status = VerdictStatus::ok;
      v.cause.clear();
      v.criteria = r.criteria;
      v.authenticity_a = r.authenticity_a;
      v.authenticity_b = r.authenticity_b;
      return v;
    } catch (const ProtocolViolation& e) {
      v.status = VerdictStatus::protocol_violation;
      v.cause = e.what();
    } catch (const EndpointError& e) {
      v.status = VerdictStatus::failure;
      v.cause = e.what();
    }
  }
  return v;
}

/// One verdict per (task, judge), ordered task-major. Calls run on up to
/// max_in_flight threads; the result does not depend on scheduling.
inline std::vector<JudgeVerdict> run_panel(const std::vector<ComparisonTask>& tasks,
                                           const std::vector<const JudgeEndpoint*>& judges,
                                           const std::string& rubric, const PanelSettings& settings = {}) {
  const std::size_t n = tasks.size() * judges.size();
  std::vector<JudgeVerdict> out(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < n; k = next++)
      out[k] = judge_one(tasks[k / judges.size()], *judges[k % judges.size()], rubric, settings);
  };
  const std::size_t threads = std::min<std::size_t>(std::max(1, settings.max_in_flight), n);
  if (threads <= 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  return out;
}

inline void write_archive(const fs::path& path, const std::vector<JudgeVerdict>& verdicts) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const JudgeVerdict& v : verdicts) out << v.to_json().dump() << '\n';
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Pooling { pooled, per_judge };

inline Pooling parse_pooling(const std::string& s) {
  if (s == "pooled") return Pooling::pooled;
  if (s == "per_judge") return Pooling::per_judge;
  throw std::invalid_argument("pooling must be 'pooled' or 'per_judge', got '" + s + "'");
}

inline const char* to_string(Pooling p) { return p == Pooling::pooled ? "pooled" : "per_judge"; }

struct CriterionRow {
  std::size_t valid = 0;
  std::size_t candidate_wins = 0;
  std::optional<double> win_rate;  // percent
  std::optional<double> baseline_mean;
  std::optional<double> candidate_mean;
};

struct JudgeStats {
  std::size_t verdicts = 0;
  std::size_t valid = 0;
  std::size_t failures = 0;
  std::size_t protocol_violations = 0;
};

struct PanelReport {
  Pooling pooling = Pooling::pooled;
  std::array<CriterionRow, 3> rows{};
  CriterionRow average;
  std::optional<double> baseline_authenticity;
  std::optional<double> candidate_authenticity;
  std::map<std::string, JudgeStats> judges;

  [[nodiscard]] const CriterionRow& row(Criterion c) const { return rows[static_cast<int>(c)]; }
  [[nodiscard]] std::size_t failures() const {
    std::size_t n = 0;
    for (const auto& [name, s] : judges) n += s.failures + s.protocol_violations;
    return n;
  }

  [[nodiscard]] json to_json() const {
    auto cell = [](const std::optional<double>& v) { return v ? json(*v) : json("unavailable"); };
    auto row_json = [&](const CriterionRow& r) {
      return json{{"valid", r.valid},
                  {"candidate_wins", r.candidate_wins},
                  {"win_rate", cell(r.win_rate)},
                  {"baseline", cell(r.baseline_mean)},
                  {"candidate", cell(r.candidate_mean)}};
    };
    json j;
    j["pooling"] = to_string(pooling);
    for (Criterion c : kCriteria) j["criteria"][key(c)] = row_json(row(c));
    j["average"] = {{"win_rate", cell(average.win_rate)},
                    {"baseline", cell(average.baseline_mean)},
                    {"candidate", cell(average.candidate_mean)}};
    j["authenticity"] = {{"baseline", cell(baseline_authenticity)}, {"candidate", cell(candidate_authenticity)}};
    for (const auto& [name, s] : judges)
      j["judges"][name] = {{"verdicts", s.verdicts},
                           {"valid", s.valid},
                           {"failures", s.failures},
                           {"protocol_violations", s.protocol_violations}};
    return j;
  }

  /// Aligned text table with the columns Criterion, Win Rate, Baseline, Ours.
  [[nodiscard]] std::string to_table() const {
    auto fmt = [](const std::optional<double>& v, bool percent) {
      if (!v) return std::string("unavailable");
      char buf[32];
      std::snprintf(buf, sizeof buf, percent ? "%.2f%%" : "%.2f", *v);
      return std::string(buf);
    };
    auto line = [&](const std::string& name, const CriterionRow& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-16s %12s %12s %12s\n", name.c_str(), fmt(r.win_rate, true).c_str(),
                    fmt(r.baseline_mean, false).c_str(), fmt(r.candidate_mean, false).c_str());
      return std::string(buf);
    };
    std::string s;
    char head[160];
    std::snprintf(head, sizeof head, "%-16s %12s %12s %12s\n", "Criterion", "Win Rate", "Baseline", "Ours");
    s += head;
    s += std::string(55, '-') + '\n';
    for (Criterion c : kCriteria) s += line(label(c), row(c));
    s += std::string(55, '-') + '\n';
    s += line("Average", average);
    return s;
  }
};

namespace detail {

// Sorting before summing makes the result independent of verdict order.
inline std::optional<double> mean_of(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline std::optional<double> mean_of_cells(const std::vector<std::optional<double>>& cells) {
  std::vector<double> v;
  for (const auto& c : cells)
    if (c) v.push_back(*c);
  return mean_of(std::move(v));
}

inline void fill_average(PanelReport& r) {
  std::vector<std::optional<double>> w, b, c;
  for (const CriterionRow& row : r.rows) {
    w.push_back(row.win_rate);
    b.push_back(row.baseline_mean);
    c.push_back(row.candidate_mean);
  }
  r.average.win_rate = mean_of_cells(w);
  r.average.baseline_mean = mean_of_cells(b);
  r.average.candidate_mean = mean_of_cells(c);
  for (const CriterionRow& row : r.rows) {
    r.average.valid += row.valid;
    r.average.candidate_wins += row.candidate_wins;
  }
}

inline PanelReport aggregate_pooled(const std::vector<JudgeVerdict>& verdicts) {
  PanelReport r;
  std::vector<double> auth_c, auth_b;
  for (Criterion c : kCriteria) {
    CriterionRow& row = r.rows[static_cast<int>(c)];
    std::vector<double> sc, sb;
    for (const JudgeVerdict& v : verdicts) {
      if (!v.valid()) continue;
      ++row.valid;
      if (v.candidate_won(c)) ++row.candidate_wins;
      sc.push_back(v.candidate_score(c));
      sb.push_back(v.baseline_score(c));
    }
    if (row.valid > 0)
      row.win_rate = 100.0 * static_cast<double>(row.candidate_wins) / static_cast<double>(row.valid);
    row.candidate_mean = mean_of(std::move(sc));
    row.baseline_mean = mean_of(std::move(sb));
  }
  for (const JudgeVerdict& v : verdicts) {
    if (!v.valid()) continue;
    auth_c.push_back(v.candidate_authenticity());
    auth_b.push_back(v.baseline_authenticity());
  }
  r.candidate_authenticity = mean_of(std::move(auth_c));
  r.baseline_authenticity = mean_of(std::move(auth_b));
  fill_average(r);
  return r;
}

}  // namespace detail

/// Win rate per criterion = candidate wins / valid verdicts x 100; mean score
/// per method; Average = arithmetic mean of the criterion rows. Failed and
/// malformed verdicts are counted per judge and excluded. per_judge pooling
/// averages the per-judge cells over judges that have them.
inline PanelReport aggregate(const std::vector<JudgeVerdict>& verdicts, Pooling pooling = Pooling::pooled) {
  if (verdicts.empty()) throw std::invalid_argument("aggregate needs at least one verdict");
  std::map<std::string, std::vector<JudgeVerdict>> by_judge;
  std::map<std::string, JudgeStats> stats;
  for (const JudgeVerdict& v : verdicts) {
    JudgeStats& s = stats[v.judge_name];
    ++s.verdicts;
    if (v.status == VerdictStatus::ok) ++s.valid;
    if (v.status == VerdictStatus::failure) ++s.failures;
    if (v.status == VerdictStatus::protocol_violation) ++s.protocol_violations;
    by_judge[v.judge_name].push_back(v);
  }

  PanelReport r;
  if (pooling == Pooling::pooled) {
    r = detail::aggregate_pooled(verdicts);
  } else {
    std::vector<PanelReport> parts;
    for (const auto& [name, vs] : by_judge) parts.push_back(detail::aggregate_pooled(vs));
    std::vector<std::optional<double>> ac, ab;
    for (int k = 0; k < 3; ++k) {
      std::vector<std::optional<double>> w, b, c;
      for (const PanelReport& p : parts) {
        w.push_back(p.rows[k].win_rate);
        b.push_back(p.rows[k].baseline_mean);
        c.push_back(p.rows[k].candidate_mean);
        r.rows[k].valid += p.rows[k].valid;
        r.rows[k].candidate_wins += p.rows[k].candidate_wins;
      }
      r.rows[k].win_rate = detail::mean_of_cells(w);
      r.rows[k].baseline_mean = detail::mean_of_cells(b);
      r.rows[k].candidate_mean = detail::mean_of_cells(c);
    }
    for (const PanelReport& p : parts) {
      ac.push_back(p.candidate_authenticity);
      ab.push_back(p.baseline_authenticity);
    }
    r.candidate_authenticity = detail::mean_of_cells(ac);
    r.baseline_authenticity = detail::mean_of_cells(ab);
    detail::fill_average(r);
  }
  r.pooling = pooling;
  r.judges = std::move(stats);
  return r;
}

// ---------------------------------------------------------------------------
// Pair manifest: {"pairs": [{"id", "candidate", "baseline", "style"}, ...]}
// with paths relative to the manifest.

inline std::vector<ImagePair> parse_pair_manifest(const json& j, const fs::path& base_dir) {
  if (!j.is_object() || !j.contains("pairs") || !j.at("pairs").is_array())
    throw std::invalid_argument("pair manifest needs a \"pairs\" list");
  for (const auto& [k, v] : j.items())
    if (k != "pairs") throw std::invalid_argument("pair manifest: unknown key '" + k + "'");
  auto resolve = [&](const json& e, const char* field) {
    const fs::path p = e.at(field).get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  std::vector<ImagePair> pairs;
  for (const json& e : j.at("pairs")) {
    for (const auto& [k, v] : e.items())
      if (k != "id" && k != "candidate" && k != "baseline" && k != "style")
        throw std::invalid_argument("pair manifest: unknown key '" + k + "'");
    pairs.push_back({e.at("id").get<std::string>(), resolve(e, "candidate"), resolve(e, "baseline"),
                     resolve(e, "style")});
  }
  return pairs;
}

}  // namespace brushflow::judge
