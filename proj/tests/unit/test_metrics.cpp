#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "aepo/metrics.hpp"
#include "aepo/run_directory.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/fixtures.hpp"

using namespace aepo;

namespace {

constexpr Token a = 20, b = 21, c = 22, d = 23, e = 24;

RunLog flat_log(int steps, double reward, double h_r) {
  RunLog log;
  for (int s = 0; s < steps; ++s) {
    RunLogRecord r;
    r.step = s;
    r.mean_reward = reward + 0.01 * s;
    r.h_r = h_r;
    if (s % 5 == 0 || s == steps - 1) r.eval_acc = 0.5 + 0.001 * s;
    log.push_back(r);
  }
  return log;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("echo overlap examples") {
  const TokenSeq ref = {e, a, b, c, e};
  const EchoScore half = echo_overlap(TokenSeq{a, b, c, d}, ref, 3);
  CHECK(half.overlap == 0.5);
  CHECK(half.novelty == 0.5);

  const EchoScore echo = echo_overlap(TokenSeq{a, b, c}, ref, 3);
  CHECK(echo.overlap == 1.0);
  CHECK(echo.novelty == 0.0);

  const EchoScore fresh = echo_overlap(TokenSeq{d, d, d, d}, ref, 3);
  CHECK(fresh.overlap == 0.0);
  CHECK(fresh.novelty == 1.0);

  CHECK_THROWS_AS(echo_overlap(TokenSeq{a, b}, ref, 3), std::invalid_argument);
  CHECK_THROWS_AS(echo_overlap(TokenSeq{a, b}, ref, 0), std::invalid_argument);
}

TEST_CASE("echo overlap is invariant under joint relabeling and monotone in the reference") {
  Rng rng(31);
  for (int k = 0; k < 300; ++k) {
    TokenSeq refl(3 + rng.below(8)), ref(rng.below(20));
    for (Token& t : refl) t = static_cast<Token>(rng.below(5));
    for (Token& t : ref) t = static_cast<Token>(rng.below(5));
    const EchoScore s = echo_overlap(refl, ref);
    CHECK(s.overlap + s.novelty == doctest::Approx(1.0).epsilon(1e-15));

    std::vector<Token> perm = {0, 1, 2, 3, 4};
    rng.shuffle(perm);
    TokenSeq refl2 = refl, ref2 = ref;
    for (Token& t : refl2) t = 100 + perm[static_cast<std::size_t>(t)];
    for (Token& t : ref2) t = 100 + perm[static_cast<std::size_t>(t)];
    CHECK(echo_overlap(refl2, ref2).overlap == s.overlap);

    TokenSeq longer = ref;
    for (int extra = 0; extra < 5; ++extra) longer.push_back(static_cast<Token>(rng.below(5)));
    CHECK(echo_overlap(refl, longer).overlap >= s.overlap);
  }
}

TEST_CASE("echo samples are deterministic and round-trip through JSONL") {
  const RunConfig cfg = fixtures::tiny_run_config();
  const Dataset data = generate_dataset(cfg.task_spec());
  const PolicyParams p = fixtures::tiny_warm_params(cfg, data);
  const auto x = sample_echo(p, data.eval, 1.0, 0.99, 12, 4);
  const auto y = sample_echo(p, data.eval, 1.0, 0.99, 12, 4);
  const std::string text = echo_to_jsonl(x);
  CHECK(text == echo_to_jsonl(y));
  CHECK(echo_to_jsonl(echo_from_jsonl(text)) == text);
  CHECK(x.size() == data.eval.size());
  CHECK(std::any_of(x.begin(), x.end(), [](const EchoSample& s) { return s.score.has_value(); }));
}

TEST_CASE("summary statistics") {
  CHECK(*entropy_gap(flat_log(40, 0.0, 0.67), 0.67) == 0.0);
  RunLog log = flat_log(20, 0.0, 1.0);
  log[18].h_r = 0.67;
  log[19].h_r = 0.0;
  // Last ceil(10%) of 20 records is two records.
  CHECK(*entropy_gap(log, 0.67) == doctest::Approx(0.335).epsilon(1e-15));
  CHECK(*final_accuracy(log) == doctest::Approx(0.519).epsilon(1e-15));
  CHECK_FALSE(entropy_gap({}, 0.67).has_value());
  CHECK_FALSE(final_accuracy({}).has_value());

  std::vector<EchoSample> samples(4);
  samples[0] = {1, true, true, EchoScore{0.25, 0.75, 3}};
  samples[1] = {2, true, true, EchoScore{0.75, 0.25, 3}};
  samples[2] = {3, true, false, EchoScore{1.0, 0.0, 3}};
  samples[3] = {4, true, true, std::nullopt};
  CHECK(*mean_novelty(samples) == 0.5);
  CHECK_FALSE(mean_novelty({}).has_value());
}

TEST_CASE("compare report has a fixed schema per run and is deterministic") {
  const std::vector<LabeledRun> runs = {{"grpo", flat_log(30, 0.1, 0.3), {}}, {"aepo", flat_log(30, 0.2, 0.67), {}}};
  const std::string text = compare_report(runs, 0.67);
  CHECK(text == compare_report(runs, 0.67));
  const auto j = nlohmann::json::parse(text);
  CHECK(j.size() == 2u);
  for (const char* label : {"grpo", "aepo"}) {
    REQUIRE(j.contains(label));
    CHECK(j[label].size() == 3u);
    CHECK(j[label].contains("final_acc"));
    CHECK(j[label].contains("entropy_gap"));
    CHECK(j[label]["mean_novelty"].is_null());
  }
  CHECK(j["aepo"]["entropy_gap"].get<double>() == 0.0);
}

TEST_CASE("curves CSV and SVG") {
  const std::vector<LabeledRun> runs = {{"grpo", flat_log(12, 0.1, 0.3), {}}, {"aepo", flat_log(9, 0.2, 0.6), {}}};
  const std::string csv = curves_csv(runs);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,grpo_reward,grpo_h_r,aepo_reward,aepo_h_r");
  CHECK(count_lines(csv) == 1 + 12);
  CHECK(csv.find('\r') == std::string::npos);
  std::string row;
  while (std::getline(in, row)) CHECK(std::count(row.begin(), row.end(), ',') == 4);

  const std::string svg = curves_svg(runs);
  CHECK(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0) == 0);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 0);
  CHECK(svg.find("href") == std::string::npos);
  std::size_t polylines = 0;
  for (std::size_t at = svg.find("<polyline"); at != std::string::npos; at = svg.find("<polyline", at + 1)) ++polylines;
  CHECK(polylines == 4u);

  const std::vector<LabeledRun> odd = {{"a<b", flat_log(3, 0.0, 0.5), {}}};
  CHECK(curves_svg(odd).find("a&lt;b") != std::string::npos);

  CHECK_THROWS_AS(curves_csv({}), std::invalid_argument);
  CHECK_THROWS_AS(curves_csv({{"x", {}, {}}}), std::invalid_argument);
}

TEST_CASE("re-exporting identical logs is byte-identical") {
  const auto dir = std::filesystem::temp_directory_path() / "aepo_curves_test";
  std::filesystem::create_directories(dir);
  const std::vector<LabeledRun> runs = {{"grpo", flat_log(12, 0.1, 0.3), {}}, {"aepo", flat_log(12, 0.2, 0.6), {}}};
  export_curves(runs, dir / "one");
  export_curves(runs, dir / "two");
  CHECK(read_file(dir / "one.csv") == read_file(dir / "two.csv"));
  CHECK(read_file(dir / "one.svg") == read_file(dir / "two.svg"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset hash matches git's blob hash") {
  // `printf 'hello\n' | git hash-object --stdin`
  CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
