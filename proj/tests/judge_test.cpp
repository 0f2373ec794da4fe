#include "brushflow/judge.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

using namespace brushflow::judge;

namespace {

const fs::path& image_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "brushflow_judge_test";
    fs::create_directories(d);
    for (const char* name : {"ours.png", "base.png", "style.png"}) std::ofstream(d / name) << name;
    return d;
  }();
  return dir;
}

std::vector<ImagePair> pairs(int n) {
  std::vector<ImagePair> out;
  for (int i = 0; i < n; ++i)
    out.push_back({"pair" + std::to_string(i), image_dir() / "ours.png", image_dir() / "base.png",
                   image_dir() / "style.png"});
  return out;
}

JudgeVerdict verdict(Order order, Slot winner, double score_a, double score_b) {
  JudgeVerdict v;
  v.pair_id = "p";
  v.judge_name = "j";
  v.presentation_order = order;
  for (CriterionVerdict& c : v.criteria) c = {winner, score_a, score_b};
  v.authenticity_a = score_a;
  v.authenticity_b = score_b;
  return v;
}

/// Verdicts with candidate always in slot A, whose per-criterion score lists
/// are given directly.
std::vector<JudgeVerdict> scripted(const std::array<std::vector<double>, 3>& cand,
                                   const std::array<std::vector<double>, 3>& base,
                                   const std::array<std::size_t, 3>& wins) {
  std::vector<JudgeVerdict> out(cand[0].size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].judge_name = "j";
    out[i].pair_id = std::to_string(i);
    for (int k = 0; k < 3; ++k)
      out[i].criteria[k] = {i < wins[k] ? Slot::A : Slot::B, cand[k][i], base[k][i]};
    out[i].authenticity_a = 5.0;
    out[i].authenticity_b = 5.0;
  }
  return out;
}

std::vector<double> mix(std::size_t n, std::size_t high_count, double high, double low) {
  std::vector<double> v(n, low);
  for (std::size_t i = 0; i < high_count; ++i) v[i] = high;
  return v;
}

std::string round2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

class Scripted : public JudgeEndpoint {
 public:
  explicit Scripted(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  [[nodiscard]] std::string name() const override { return "scripted"; }
  std::string submit(const ComparisonTask&, const std::string&) const override {
    const std::size_t k = calls_++;
    return replies_[std::min(k, replies_.size() - 1)];
  }
  mutable std::atomic<std::size_t> calls_{0};

 private:
  std::vector<std::string> replies_;
};

const std::string kGood = format_reply(ParsedReply{{{{Slot::A, 8, 6}, {Slot::B, 5, 7}, {Slot::A, 9, 2}}}, 7, 4});

}  // namespace

TEST(BuildTasks, SeedDeterminesOrder) {
  const auto a = build_tasks(pairs(1), 0);
  const auto b = build_tasks(pairs(1), 0);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].presentation_order, b[0].presentation_order);
  const auto big1 = build_tasks(pairs(50), 9);
  const auto big2 = build_tasks(pairs(50), 9);
  for (std::size_t i = 0; i < big1.size(); ++i) EXPECT_EQ(big1[i].presentation_order, big2[i].presentation_order);
}

TEST(BuildTasks, OrderIsBalancedAndSlotsFollowIt) {
  const auto tasks = build_tasks(pairs(1000), 42);
  int ab = 0;
  for (const ComparisonTask& t : tasks) {
    if (t.presentation_order == Order::AB) {
      ++ab;
      EXPECT_EQ(t.image_a_path.filename(), "ours.png");
    } else {
      EXPECT_EQ(t.image_b_path.filename(), "ours.png");
    }
  }
  // 3 sigma of Binomial(1000, 0.5) is about 47.
  EXPECT_GE(ab, 440);
  EXPECT_LE(ab, 560);
}

TEST(BuildTasks, EmptyAndMissing) {
  EXPECT_TRUE(build_tasks({}, 1).empty());
  auto p = pairs(2);
  p[1].baseline = image_dir() / "nope_1.png";
  p[0].style_reference = image_dir() / "nope_2.png";
  try {
    build_tasks(p, 0);
    FAIL() << "expected TaskError";
  } catch (const TaskError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("nope_1.png"), std::string::npos);
    EXPECT_NE(msg.find("nope_2.png"), std::string::npos);
  }
}

TEST(ParseReply, AcceptsFencedJsonOnly) {
  const ParsedReply r = parse_reply("Some preamble.\n" + kGood + "trailing words");
  EXPECT_EQ(r.criteria[1].winner, Slot::B);
  EXPECT_EQ(r.criteria[2].score_b, 2.0);
  EXPECT_EQ(r.authenticity_a, 7.0);

  EXPECT_THROW(parse_reply("A wins flow_alignment, 8 vs 6."), ProtocolViolation);
  EXPECT_THROW(parse_reply("```json\n{not json}\n```"), ProtocolViolation);
  std::string tie = kGood;
  tie.replace(tie.find("\"A\""), 3, "\"tie\"");
  EXPECT_THROW(parse_reply(tie), ProtocolViolation);
  std::string high = kGood;
  high.replace(high.find(": 9"), 3, ": 11");
  EXPECT_THROW(parse_reply(high), ProtocolViolation);
  std::string missing = kGood;
  missing.replace(missing.find("materiality"), 11, "materialism");
  EXPECT_THROW(parse_reply(missing), ProtocolViolation);
}

TEST(RunPanel, RetriesMalformedRepliesThenSucceeds) {
  Scripted judge({"no idea", "```json\n{}\n```", kGood});
  const auto tasks = build_tasks(pairs(1), 3);
  const auto v = run_panel(tasks, {&judge}, "rubric");
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(v[0].valid());
  EXPECT_EQ(v[0].raw_responses.size(), 3u);
  EXPECT_EQ(v[0].raw_responses[0], "no idea");
}

TEST(RunPanel, GivesUpAfterThreeRetries) {
  Scripted judge({"free text"});
  const auto v = run_panel(build_tasks(pairs(1), 3), {&judge}, "rubric");
  EXPECT_EQ(v[0].status, VerdictStatus::protocol_violation);
  EXPECT_EQ(judge.calls_.load(), 4u);
  EXPECT_EQ(v[0].raw_responses.size(), 4u);
  EXPECT_FALSE(v[0].cause.empty());
}

TEST(RunPanel, AlwaysAMatchesCandidateSlotFraction) {
  mock::AlwaysA judge;
  const auto tasks = build_tasks(pairs(400), 11);
  std::size_t in_a = 0;
  for (const auto& t : tasks) in_a += t.presentation_order == Order::AB;
  const PanelReport r = aggregate(run_panel(tasks, {&judge}, "rubric"));
  for (Criterion c : kCriteria)
    EXPECT_DOUBLE_EQ(*r.row(c).win_rate, 100.0 * static_cast<double>(in_a) / 400.0);
}

TEST(RunPanel, FilenameHashIsReproducible) {
  mock::FilenameHash judge;
  const auto tasks = build_tasks(pairs(30), 5);
  const auto a = run_panel(tasks, {&judge}, "rubric", {3, 4});
  const auto b = run_panel(tasks, {&judge}, "rubric", {3, 1});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].to_json(), b[i].to_json());
  EXPECT_EQ(aggregate(a).to_json(), aggregate(b).to_json());
}

TEST(RunPanel, DownJudgeIsIsolated) {
  mock::AlwaysA good;
  mock::Unreachable down;
  const auto tasks = build_tasks(pairs(10), 2);
  const auto v = run_panel(tasks, {&good, &down}, "rubric");
  ASSERT_EQ(v.size(), 20u);
  const PanelReport both = aggregate(v);
  EXPECT_EQ(both.judges.at("mock-unreachable").failures, 10u);
  EXPECT_EQ(both.judges.at("mock-always-a").valid, 10u);
  const PanelReport alone = aggregate(run_panel(tasks, {&good}, "rubric"));
  EXPECT_EQ(both.to_table(), alone.to_table());
}

TEST(Aggregate, AveragesFromPerCriterionMeans) {
  const std::size_t n = 100;
  const auto v = scripted({mix(n, 38, 9, 8), mix(n, 20, 9, 8), mix(n, 50, 9, 8)},
                          {mix(n, 13, 8, 7), mix(n, 13, 8, 7), mix(n, 31, 8, 7)}, {85, 86, 86});
  const PanelReport r = aggregate(v);
  EXPECT_EQ(round2(*r.row(Criterion::flow_alignment).candidate_mean), "8.38");
  EXPECT_EQ(round2(*r.row(Criterion::materiality).baseline_mean), "7.13");
  EXPECT_EQ(round2(*r.average.baseline_mean), "7.19");
  EXPECT_EQ(round2(*r.average.candidate_mean), "8.36");
  EXPECT_NE(r.to_table().find("Average"), std::string::npos);
}

TEST(Aggregate, WinRatesOverOneHundredTwentyVerdicts) {
  const std::size_t n = 120;
  const auto v = scripted({mix(n, 0, 9, 8), mix(n, 0, 9, 8), mix(n, 0, 9, 8)},
                          {mix(n, 0, 8, 7), mix(n, 0, 8, 7), mix(n, 0, 8, 7)}, {102, 103, 103});
  const PanelReport r = aggregate(v);
  EXPECT_EQ(round2(*r.row(Criterion::flow_alignment).win_rate), "85.00");
  EXPECT_EQ(round2(*r.row(Criterion::aesthetics).win_rate), "85.83");
  // Average is the plain mean of the rows.
  EXPECT_EQ(round2(*r.average.win_rate), "85.56");
}

TEST(Aggregate, SingleWinAndUnavailableCells) {
  const PanelReport one = aggregate({verdict(Order::BA, Slot::B, 3, 9)});
  for (Criterion c : kCriteria) {
    EXPECT_EQ(*one.row(c).win_rate, 100.0);
    EXPECT_EQ(*one.row(c).candidate_mean, 9.0);
    EXPECT_EQ(*one.row(c).baseline_mean, 3.0);
  }
  JudgeVerdict bad = verdict(Order::AB, Slot::A, 5, 5);
  bad.status = VerdictStatus::failure;
  const PanelReport none = aggregate({bad});
  EXPECT_FALSE(none.row(Criterion::materiality).win_rate.has_value());
  EXPECT_FALSE(none.average.candidate_mean.has_value());
  EXPECT_EQ(none.to_json()["criteria"]["materiality"]["win_rate"], "unavailable");
  EXPECT_NE(none.to_table().find("unavailable"), std::string::npos);
  EXPECT_THROW(aggregate({}), std::invalid_argument);
}

TEST(Aggregate, PermutationAndDerandomizationInvariant) {
  std::mt19937_64 rng(7);
  std::vector<JudgeVerdict> v;
  for (int i = 0; i < 200; ++i) {
    JudgeVerdict x;
    x.judge_name = (i % 3 == 0) ? "j1" : "j2";
    x.pair_id = std::to_string(i);
    for (CriterionVerdict& c : x.criteria)
      c = {(rng() & 1) ? Slot::A : Slot::B, 1.0 + static_cast<double>(rng() % 90) / 10.0,
           1.0 + static_cast<double>(rng() % 90) / 10.0};
    x.authenticity_a = 1.0 + static_cast<double>(rng() % 10);
    x.authenticity_b = 1.0 + static_cast<double>(rng() % 10);
    v.push_back(x);
  }
  // Same preferences, presented the other way round.
  std::vector<JudgeVerdict> swapped = v;
  for (JudgeVerdict& x : swapped) {
    x.presentation_order = x.presentation_order == Order::AB ? Order::BA : Order::AB;
    for (CriterionVerdict& c : x.criteria) {
      c.winner = c.winner == Slot::A ? Slot::B : Slot::A;
      std::swap(c.score_a, c.score_b);
    }
    std::swap(x.authenticity_a, x.authenticity_b);
  }
  std::vector<JudgeVerdict> shuffled = v;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (Pooling p : {Pooling::pooled, Pooling::per_judge}) {
    const json ref = aggregate(v, p).to_json();
    EXPECT_EQ(aggregate(swapped, p).to_json(), ref);
    EXPECT_EQ(aggregate(shuffled, p).to_json(), ref);
  }
}

TEST(Aggregate, PerJudgePoolingAveragesJudges) {
  std::vector<JudgeVerdict> v;
  // j1: 3 verdicts, candidate always wins. j2: 1 verdict, candidate loses.
  for (int i = 0; i < 3; ++i) {
    v.push_back(verdict(Order::AB, Slot::A, 8, 6));
    v.back().judge_name = "j1";
  }
  v.push_back(verdict(Order::AB, Slot::B, 4, 6));
  v.back().judge_name = "j2";
  EXPECT_DOUBLE_EQ(*aggregate(v, Pooling::pooled).row(Criterion::aesthetics).win_rate, 75.0);
  const PanelReport pj = aggregate(v, Pooling::per_judge);
  EXPECT_DOUBLE_EQ(*pj.row(Criterion::aesthetics).win_rate, 50.0);
  EXPECT_DOUBLE_EQ(*pj.row(Criterion::aesthetics).candidate_mean, 6.0);
  EXPECT_EQ(parse_pooling("per_judge"), Pooling::per_judge);
  EXPECT_THROW(parse_pooling("mean"), std::invalid_argument);
}

TEST(Aggregate, FairCoinOverTenThousandTasks) {
  mock::FairCoin judge(2024);
  const auto tasks = build_tasks(pairs(10000), 1);
  const PanelReport r = aggregate(run_panel(tasks, {&judge}, "rubric"));
  for (Criterion c : kCriteria) {
    EXPECT_GE(*r.row(c).win_rate, 48.0);
    EXPECT_LE(*r.row(c).win_rate, 52.0);
  }
}

TEST(JudgeConfig, ParsesAndRejects) {
  const auto cfg = parse_judge_config(json::parse(R"([
    {"name": "gpt", "endpoint_url": "https://api.example.com/v1/chat/completions", "model_id": "m",
     "credential_env_var": "KEY", "timeout_s": 30},
    {"name": "coin", "mock": "fair_coin", "seed": 4}])"));
  ASSERT_EQ(cfg.size(), 2u);
  EXPECT_EQ(cfg[0].timeout_s, 30.0);
  EXPECT_EQ(cfg[1].mock_seed, 4u);
  EXPECT_EQ(make_endpoint(cfg[1])->name(), "coin");
  EXPECT_THROW(parse_judge_config(json::parse(R"([{"name": "x", "mock": "always_a", "tmeout_s": 3}])")),
               std::invalid_argument);
  EXPECT_THROW(parse_judge_config(json::parse("[]")), std::invalid_argument);
  EXPECT_THROW(make_endpoint({"x", "ftp://nowhere", "m", "", 1.0}), std::invalid_argument);
}

TEST(Rubric, AssetIsVersionedAndNamesTheProtocol) {
  const std::string rubric = load_rubric();
  EXPECT_EQ(rubric.rfind("rubric-version: 1", 0), 0u);
  EXPECT_NE(rubric.find("flat sticker"), std::string::npos);
  EXPECT_NE(rubric.find("```json"), std::string::npos);
}

TEST(Base64, MatchesKnownVectors) {
  EXPECT_EQ(base64(""), "");
  EXPECT_EQ(base64("f"), "Zg==");
  EXPECT_EQ(base64("foobar"), "Zm9vYmFy");
}

class HttpJudgeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = json::parse(req.body);
      if (last_auth_ != "Bearer sekrit") {
        res.status = 401;
        return;
      }
      res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply_}}}}}}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  EndpointConfig config(const std::string& env) const {
    return {"http", "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions", "judge-model", env, 5.0};
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::string reply_ = kGood;
  std::string last_auth_;
  json last_body_;
};

TEST_F(HttpJudgeTest, SendsImagesAndParsesReply) {
  ::setenv("BRUSHFLOW_TEST_JUDGE_KEY", "sekrit", 1);
  HttpChatJudge judge(config("BRUSHFLOW_TEST_JUDGE_KEY"));
  const auto v = run_panel(build_tasks(pairs(1), 0), {&judge}, "the rubric");
  ASSERT_TRUE(v[0].valid()) << v[0].cause;
  EXPECT_EQ(v[0].raw_responses[0], kGood);
  EXPECT_EQ(last_body_["model"], "judge-model");
  EXPECT_EQ(last_body_["messages"][0]["content"], "the rubric");
  const json& content = last_body_["messages"][1]["content"];
  ASSERT_EQ(content.size(), 6u);
  EXPECT_EQ(content[1]["image_url"]["url"], "data:image/png;base64," + base64("style.png"));
}

TEST_F(HttpJudgeTest, AuthFailureAndProtocolViolation) {
  ::setenv("BRUSHFLOW_TEST_JUDGE_KEY", "wrong", 1);
  HttpChatJudge bad_key(config("BRUSHFLOW_TEST_JUDGE_KEY"));
  const auto tasks = build_tasks(pairs(1), 0);
  auto v = run_panel(tasks, {&bad_key}, "r");
  EXPECT_EQ(v[0].status, VerdictStatus::failure);
  EXPECT_NE(v[0].cause.find("401"), std::string::npos);

  ::unsetenv("BRUSHFLOW_TEST_JUDGE_UNSET");
  HttpChatJudge no_key(config("BRUSHFLOW_TEST_JUDGE_UNSET"));
  v = run_panel(tasks, {&no_key}, "r");
  EXPECT_NE(v[0].cause.find("BRUSHFLOW_TEST_JUDGE_UNSET"), std::string::npos);

  ::setenv("BRUSHFLOW_TEST_JUDGE_KEY", "sekrit", 1);
  reply_ = "I prefer A overall.";
  HttpChatJudge judge(config("BRUSHFLOW_TEST_JUDGE_KEY"));
  v = run_panel(tasks, {&judge}, "r");
  EXPECT_EQ(v[0].status, VerdictStatus::protocol_violation);
  EXPECT_EQ(v[0].raw_responses.size(), 4u);
}

TEST(HttpJudge, UnreachableEndpointIsAFailureEntry) {
  // Port 1 is privileged and has no listener in the test environment.
  HttpChatJudge judge({"down", "http://127.0.0.1:1/x", "m", "", 1.0});
  const auto v = run_panel(build_tasks(pairs(1), 0), {&judge}, "r");
  EXPECT_EQ(v[0].status, VerdictStatus::failure);
  EXPECT_NE(v[0].cause.find("transport"), std::string::npos);
}
