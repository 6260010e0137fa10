#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bsm/dist_metrics.hpp"
#include "bsm/synth.hpp"

using namespace bsm;
using Catch::Approx;

namespace {

CountVector cv(std::vector<std::int64_t> counts) {
  CountVector v;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    v.keys.push_back("k" + std::to_string(i));
    v.counts.push_back(counts[i]);
  }
  return v;
}

// Brute-force oracles, straight from the definitions, independent of the
// implementation's alignment/normalization path.
double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double oracle_jsd(std::vector<double> p, std::vector<double> q) {
  double sp = 0, sq = 0;
  for (double v : p) sp += v;
  for (double v : q) sq += v;
  for (auto& v : p) v /= sp;
  for (auto& v : q) v /= sq;
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) d += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0) d += 0.5 * q[i] * std::log2(q[i] / m);
  }
  return d;
}

double oracle_tv(std::vector<double> p, std::vector<double> q) {
  double sp = 0, sq = 0;
  for (double v : p) sp += v;
  for (double v : q) sq += v;
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] / sp - q[i] / sq);
  return 0.5 * d;
}

}  // namespace

TEST_CASE("histogram groups by role and excludes INVALID", "[dist]") {
  AnswerGrouping g;
  g.by_label = {{Label::S, "male"}, {Label::A, "female"}, {Label::U, "unknown"}};
  std::vector<ResponseRecord> rs = {
      {"m", "p1", "x", Label::S, NormMethod::exact},
      {"m", "p2", "x", Label::A, NormMethod::exact},
      {"m", "p3", "x", Label::U, NormMethod::exact},
      {"m", "p4", "x", Label::U, NormMethod::exact},
      {"m", "p5", "x", Label::INVALID, NormMethod::invalid},
  };
  const auto h = histogram(rs, g);
  REQUIRE(h.counts.keys == std::vector<std::string>{"female", "male", "unknown"});
  CHECK(h.counts.counts == std::vector<std::int64_t>{1, 1, 2});
  CHECK(h.n_invalid == 1);

  SECTION("empty input is an all-zero vector") {
    const auto e = histogram({}, g);
    CHECK(e.counts.total() == 0);
  }
}

TEST_CASE("histogram matches a brute-force recount on synthetic responses", "[dist]") {
  const auto prompts = generate_bbq_prompts(Dimension::parse("gender"), 100, 0);
  SynthModelSpec spec{"m", 0.6, 0.2, 7};
  const auto responses = generate_responses(spec, prompts, RefusalLexicon::defaults());
  const auto h = histogram(responses, AnswerGrouping::by_role());

  std::int64_t s = 0, a = 0, u = 0;
  for (const auto& r : responses) {
    if (r.label == Label::S) ++s;
    if (r.label == Label::A) ++a;
    if (r.label == Label::U) ++u;
  }
  REQUIRE(h.counts.keys ==
          std::vector<std::string>{"anti_stereotype", "stereotype", "unknown"});
  CHECK(h.counts.counts == std::vector<std::int64_t>{a, s, u});
}

TEST_CASE("cosine distance cases", "[dist]") {
  CHECK(cosine_distance(cv({3, 1}), cv({3, 1})) == Approx(0.0).margin(1e-12));
  CHECK(cosine_distance(cv({1, 0}), cv({0, 1})) == Approx(1.0));
  CHECK(cosine_distance(cv({3, 1}), cv({1, 3})) == Approx(0.4));
  CHECK_THROWS_AS(cosine_distance(cv({0, 0}), cv({1, 1})), DataError);
}

TEST_CASE("cosine distance is scale invariant", "[dist]") {
  const CounterRng rng(9);
  for (std::uint64_t i = 0; i < 200; ++i) {
    CountVector u = cv({static_cast<std::int64_t>(rng.bits(4 * i) % 100),
                        static_cast<std::int64_t>(rng.bits(4 * i + 1) % 100),
                        static_cast<std::int64_t>(1 + rng.bits(4 * i + 2) % 100)});
    CountVector su = u;
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.bits(4 * i + 3) % 9);
    for (auto& x : su.counts) x *= c;
    CHECK(cosine_distance(u, su) == Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("jsd cases", "[dist]") {
  CHECK(jsd(cv({2, 3}), cv({2, 3})) == Approx(0.0).margin(1e-12));
  CHECK(jsd(cv({1, 0}), cv({0, 1})) == Approx(1.0));
  CHECK(jsd(cv({1, 0}), cv({1, 1})) == Approx(0.3113).margin(1e-4));
  CHECK_THROWS_AS(jsd(cv({0, 0}), cv({1, 1})), DataError);
}

TEST_CASE("tv distance cases", "[dist]") {
  CHECK(tv_distance(cv({3, 1}), cv({3, 1})) == Approx(0.0).margin(1e-12));
  CHECK(tv_distance(cv({1, 0}), cv({0, 1})) == Approx(1.0));
  CHECK(tv_distance(cv({3, 1}), cv({1, 3})) == Approx(0.5));
}

TEST_CASE("distances agree with brute-force oracles over random vectors", "[dist]") {
  const CounterRng rng(1234);
  std::uint64_t c = 0;
  int compared = 0;
  for (int round = 0; round < 1000; ++round) {
    const std::size_t bins = 2 + rng.bits(c++) % 5;  // up to 6 bins
    std::vector<std::int64_t> a(bins), b(bins);
    std::int64_t ta = 0, tb = 0;
    for (std::size_t i = 0; i < bins; ++i) {
      a[i] = static_cast<std::int64_t>(rng.bits(c++) % 20);
      b[i] = static_cast<std::int64_t>(rng.bits(c++) % 20);
      ta += a[i];
      tb += b[i];
    }
    if (ta == 0 || tb == 0) continue;
    ++compared;
    const CountVector u = cv(a), v = cv(b);
    const std::vector<double> da(a.begin(), a.end()), db(b.begin(), b.end());

    const double cd = cosine_distance(u, v);
    const double jd = jsd(u, v);
    const double td = tv_distance(u, v);
    CHECK(cd == Approx(oracle_cosine(da, db)).margin(1e-12));
    CHECK(jd == Approx(oracle_jsd(da, db)).margin(1e-12));
    CHECK(td == Approx(oracle_tv(da, db)).margin(1e-12));

    // bounds and symmetry
    for (double d : {cd, jd, td}) {
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
    }
    CHECK(cosine_distance(v, u) == Approx(cd).margin(1e-15));
    CHECK(jsd(v, u) == Approx(jd).margin(1e-15));
    CHECK(tv_distance(v, u) == Approx(td).margin(1e-15));

    // identity of indiscernibles at the distribution level
    if (jd < 1e-12) {
      for (std::size_t i = 0; i < bins; ++i)
        CHECK(da[i] / double(ta) == Approx(db[i] / double(tb)).margin(1e-9));
    }
  }
  CHECK(compared > 900);
}

TEST_CASE("key alignment zero-fills the union of categories", "[dist]") {
  CountVector u;
  u.keys = {"alpha", "beta"};
  u.counts = {2, 2};
  CountVector v;
  v.keys = {"beta", "gamma"};
  v.counts = {2, 2};
  // aligned: u = [2,2,0], v = [0,2,2] over {alpha,beta,gamma}
  CHECK(cosine_distance(u, v) == Approx(1.0 - 4.0 / 8.0));
  CHECK(tv_distance(u, v) == Approx(0.5));
}
