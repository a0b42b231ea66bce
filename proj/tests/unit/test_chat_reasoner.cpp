// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "http_fixture.hpp"
#include "ldefense/chat_client.hpp"
#include "ldefense/prompts.hpp"
#include "ldefense/reasoner.hpp"
#include "ldefense/util.hpp"
#include "test_support.hpp"

using namespace ldefense;

namespace {

std::string golden(const std::string& name) {
  std::ifstream in(std::string(LDEFENSE_TEST_DATA) + "/golden/" + name, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing golden file " << name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kClaim = "The city doubled its bus fleet in 2020.";
const std::vector<std::string> kEvidence = {"Transit records show 212 buses in 2019 and 220 in 2020.",
                                            "The mayor said the fleet grew."};

// Counts calls and can be told to fail.
class ScriptedClient final : public ChatClient {
 public:
  std::string model() const override { return "scripted"; }
  std::atomic<bool> fail_true_side{false};
  std::string reply = "a rationale";

 protected:
  std::string do_complete(const ChatRequest& request) override {
    ++requests_;
    if (fail_true_side && request.user.find("label [true]") != std::string::npos) {
      throw ExternalServiceError("scripted failure");
    }
    return reply + " #" + request.user.substr(0, 40);
  }
};

CompetingEvidenceSets sets_for(const std::string& id, std::vector<std::string> minus, std::vector<std::string> plus) {
  CompetingEvidenceSets s;
  s.claim_id = id;
  for (auto& t : minus) s.false_set.push_back(EvidenceItem{0, 0, t, "", 0.5, 0.5, 0.25});
  for (auto& t : plus) s.true_set.push_back(EvidenceItem{0, 0, t, "", 0.5, 0.5, 0.25});
  return s;
}

}  // namespace

TEST_CASE("reasoning prompts match the hand-written goldens") {
  const auto full = build_prompt(kClaim, Side::kFalse, kEvidence);
  CHECK(full.prompt.user == golden("prompt_false_two_evidence.txt"));
  CHECK(full.prompt.system == prompts::kReasoningSystem);
  CHECK(full.evidence_used == 2);

  CHECK(build_prompt(kClaim, Side::kTrue, {}).prompt.user == golden("prompt_true_no_candidates.txt"));

  ReasonerFlags no_ev;
  no_ev.no_evidence = true;
  CHECK(build_prompt(kClaim, Side::kTrue, kEvidence, no_ev).prompt.user == golden("prompt_true_no_evidence.txt"));

  ReasonerFlags no_prior;
  no_prior.no_prior_label = true;
  const auto np = build_prompt(kClaim, Side::kFalse, std::span(kEvidence).first(1), no_prior);
  CHECK(np.prompt.user == golden("prompt_no_prior_label.txt"));
  CHECK(np.prompt.user.find("false") == std::string::npos);
}

TEST_CASE("system message is the published one") {
  std::ifstream in(std::string(LDEFENSE_TEST_DATA) + "/../paper.md");
  REQUIRE(in.good());
  std::string line;
  std::string found;
  while (std::getline(in, line)) {
    const auto at = line.find("You have been specially designed");
    if (at == std::string::npos) continue;
    const auto end = line.find(" }''", at);
    found = line.substr(at, end - at);
    break;
  }
  CHECK(found == prompts::kReasoningSystem);
}

TEST_CASE("prompt budget drops the lowest-ranked evidence first") {
  std::vector<std::string> ev;
  for (int i = 0; i < 10; ++i) ev.push_back("sentence " + std::to_string(i) + " " + std::string(80, 'x'));
  const auto r = build_prompt(kClaim, Side::kTrue, ev, {}, 600);
  CHECK(r.prompt.user.size() <= 600);
  CHECK(r.evidence_used + r.evidence_dropped == 10);
  CHECK(r.evidence_dropped > 0);
  CHECK(r.prompt.user.find("sentence 0 ") != std::string::npos);
  CHECK(r.prompt.user.find("sentence 9 ") == std::string::npos);
}

TEST_CASE("generate records the request hash and generator") {
  MockChatClient mock;
  const auto p = build_prompt(kClaim, Side::kFalse, kEvidence).prompt;
  const auto e = generate(mock, p, Side::kFalse, 0.8);
  CHECK(e.orientation == Side::kFalse);
  CHECK(e.generator == "mock");
  CHECK(e.prompt_hash == ChatRequest{"mock", p.system, p.user, 0.8}.hash());
  CHECK_FALSE(e.prompt_hash == ChatRequest{"mock", p.system, p.user, 0.0}.hash());
  CHECK_THROWS_AS(generate(mock, p, Side::kFalse, -0.1), std::invalid_argument);
}

TEST_CASE("mock rationale is confident only with assertive markers of the prior label") {
  MockChatClient mock;
  auto run = [&](Side prior, std::vector<std::string> ev) {
    return generate(mock, build_prompt(kClaim, prior, ev).prompt, prior).text;
  };
  const std::vector<std::string> strong{"Officials said the story was thoroughly debunked.",
                                        "A review found it has no basis in the records."};
  const auto confident = run(Side::kFalse, strong);
  CHECK(mock_llm::marker_mentions(confident, Side::kFalse) >= 2);
  CHECK(mock_llm::marker_mentions(confident, Side::kTrue) == 0);

  // Same evidence argued for the other side gives a hedge without markers.
  const auto weak = run(Side::kTrue, strong);
  CHECK(mock_llm::marker_mentions(weak, Side::kTrue) == 0);
  CHECK(mock_llm::marker_mentions(weak, Side::kFalse) == 0);

  const std::vector<std::string> hedged{"Unconfirmed posts claim the story was thoroughly debunked.",
                                        "Unconfirmed posts claim it has no basis in the records."};
  CHECK(mock_llm::marker_mentions(run(Side::kFalse, hedged), Side::kFalse) == 0);
  CHECK(mock_llm::marker_mentions(run(Side::kFalse, {}), Side::kFalse) == 0);
  CHECK(mock_llm::assertive_marker_count(strong[0] + "\n" + hedged[1], Side::kFalse) == 1);
  CHECK(run(Side::kFalse, strong) == confident);
}

TEST_CASE("mock judge and verdict replies") {
  MockChatClient mock;
  const auto judged = mock.complete({"mock", std::string(prompts::kJudgeSystem), "anything", 0.0});
  CHECK(judged.size() == 15);
  CHECK(judged.substr(0, 2) == "M:");
  std::string user = std::string(prompts::kVerdictClaim) + "c" + std::string(prompts::kVerdictFalse) +
                     "the story was thoroughly debunked" + std::string(prompts::kVerdictTrue) + "unclear" +
                     std::string(prompts::kVerdictLabels) + "false, half, true" + std::string(prompts::kVerdictAsk);
  CHECK(mock.complete({"mock", std::string(prompts::kVerdictSystem), user, 0.0}) == "false");
}

TEST_CASE("cached client serves repeats from disk") {
  testing::TempDir dir;
  auto inner = std::make_shared<MockChatClient>();
  const ChatRequest req{"mock", std::string(prompts::kReasoningSystem),
                        "Given a claim: [x], a veracity label [true], please give me", 0.8};
  std::string first;
  {
    CachedChatClient cached(inner, dir.path());
    first = cached.complete(req);
    CHECK(inner->requests() == 1);
  }
  CachedChatClient again(inner, dir.path());
  CHECK(again.complete(req) == first);
  CHECK(inner->requests() == 1);
  CHECK(again.hits() == 1);

  const auto entry = nlohmann::json::parse(*read_file(again.path_for(req)));
  CHECK(entry["request"]["user"] == req.user);
  CHECK(entry["response"] == first);
  CHECK(entry["model"] == "mock");
  CHECK(entry.contains("timestamp"));

  std::ofstream(again.path_for(req)) << "{not json";
  CHECK(again.complete(req) == first);
  CHECK(inner->requests() == 2);
}

TEST_CASE("empty completions are errors") {
  class Empty final : public ChatClient {
   public:
    std::string model() const override { return "empty"; }

   protected:
    std::string do_complete(const ChatRequest&) override { return "  \n"; }
  } empty;
  CHECK_THROWS_AS(empty.complete({"empty", "s", "u", 0.0}), ExternalServiceError);
}

namespace {

struct ChatServer {
  testing::LocalServer local;
  std::atomic<int> calls{0};
  std::atomic<int> transient{0};  // first N calls answer 429 / 503 alternately
  std::atomic<int> status{200};
  std::mutex mu;
  std::string last_auth;
  nlohmann::json last_body;
  std::string content = "server rationale";

  ChatServer() {
    local.server().Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++calls;
      {
        std::lock_guard lock(mu);
        last_auth = req.get_header_value("Authorization");
        last_body = nlohmann::json::parse(req.body);
      }
      if (n <= transient) {
        res.status = n % 2 ? 429 : 503;
        res.set_content("slow down", "text/plain");
        return;
      }
      if (status != 200) {
        res.status = status;
        res.set_content("rejected", "text/plain");
        return;
      }
      res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(),
                      "application/json");
    });
    local.start();
  }

  HttpChatConfig config() const {
    HttpChatConfig c;
    c.base_url = local.url() + "/v1";
    c.model = "remote-model";
    c.api_key_env = "LDEFENSE_TEST_CHAT_KEY";
    c.max_retries = 4;
    c.requests_per_second = 1000.0;
    c.initial_backoff_ms = 1;
    c.timeout_seconds = 5;
    return c;
  }
};

}  // namespace

TEST_CASE("HTTP chat client") {
  ChatServer srv;
  ::setenv("LDEFENSE_TEST_CHAT_KEY", "sk-test", 1);
  HttpChatClient client(srv.config());
  const ChatRequest req{"remote-model", "system text", "user text", 0.8};

  SUBCASE("request shape and key") {
    CHECK(client.complete(req) == "server rationale");
    CHECK(srv.last_auth == "Bearer sk-test");
    CHECK(srv.last_body["model"] == "remote-model");
    CHECK(srv.last_body["messages"][0]["role"] == "system");
    CHECK(srv.last_body["messages"][1]["content"] == "user text");
    CHECK(srv.last_body["temperature"].get<double>() == 0.8);
  }
  SUBCASE("429 and 5xx are retried") {
    srv.transient = 3;
    CHECK(client.complete(req) == "server rationale");
    CHECK(srv.calls == 4);
  }
  SUBCASE("retries are bounded") {
    srv.transient = 100;
    CHECK_THROWS_AS(client.complete(req), ExternalServiceError);
    CHECK(srv.calls == 4);
  }
  SUBCASE("other 4xx fail at once") {
    srv.status = 401;
    CHECK_THROWS_AS(client.complete(req), ExternalServiceError);
    CHECK(srv.calls == 1);
  }
  SUBCASE("empty content is an error") {
    srv.content = "";
    CHECK_THROWS_AS(client.complete(req), ExternalServiceError);
  }
  ::unsetenv("LDEFENSE_TEST_CHAT_KEY");
}

TEST_CASE("reasoning over claims") {
  Claim a{"a", "Claim a.", "false", {}};
  Claim b{"b", "Claim b.", "true", {}};
  Dataset ds;
  ds.claims = {a, b};
  const std::vector<CompetingEvidenceSets> sets{sets_for("b", {"b minus"}, {"b plus"}),
                                                sets_for("a", {"a minus"}, {})};
  ScriptedClient client;
  const auto out = reason_dataset(ds, sets, client, {}, 0.8, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0].claim_id == "a");
  CHECK(out[0].e_minus.orientation == Side::kFalse);
  CHECK(out[0].e_plus.orientation == Side::kTrue);
  CHECK(out[1].claim_id == "b");
  CHECK(client.requests() == 4);

  const auto dump = explanations_dump(out);
  testing::TempDir dir;
  std::ofstream(dir / "e.jsonl") << dump;
  CHECK(load_explanations_dump(dir / "e.jsonl") == out);

  client.fail_true_side = true;
  CHECK_THROWS_AS(reason_both(a, sets[1], client), ExternalServiceError);
  CHECK_THROWS_AS(reason_dataset(ds, std::span(sets).first(1), client, {}), std::invalid_argument);
}

TEST_CASE("random-evidence ablation samples the claim's own candidates") {
  Claim c{"r", "Claim.", "true", {Report{"r0", "", "", {}, {}}}};
  for (int i = 0; i < 30; ++i) c.reports[0].sentences.push_back("cand " + std::to_string(i) + ".");
  auto sets = sets_for("r", {"top minus"}, {"top plus"});
  sets.k = 10;
  ReasonerFlags flags;
  flags.random_evidence = true;
  flags.seed = 5;
  const auto a = evidence_for_side(c, sets, Side::kFalse, flags);
  CHECK(a.size() == 10);
  CHECK(a == evidence_for_side(c, sets, Side::kFalse, flags));
  CHECK_FALSE(a == evidence_for_side(c, sets, Side::kTrue, flags));
  for (const auto& s : a) CHECK(s.rfind("cand ", 0) == 0);
  CHECK(evidence_for_side(c, sets, Side::kFalse, {}) == std::vector<std::string>{"top minus"});
}
