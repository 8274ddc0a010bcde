#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include <zlib.h>

#include "fedsim/dataio.hpp"
#include "support/synthetic.hpp"

using namespace fedsim;

TEST_CASE("parses labels and 1-based sparse features") {
  const Dataset ds = parse_libsvm("+1 1:0.5 3:-2\n-1 2:1\n1 1:3\n");
  REQUIRE(ds.count() == 3);
  REQUIRE(ds.dim == 3);
  REQUIRE(ds.positives() == 2);
  REQUIRE(ds.samples[0].label == 1.0);
  REQUIRE(ds.samples[0].idx == std::vector<std::int32_t>{0, 2});
  REQUIRE(ds.samples[0].val == std::vector<double>{0.5, -2.0});
  REQUIRE(ds.samples[1].label == -1.0);
  REQUIRE(ds.samples[1].idx == std::vector<std::int32_t>{1});
  REQUIRE(ds.samples[2].label == 1.0);  // bare "1" means +1
}

TEST_CASE("tolerates blank lines, padding and CR line ends") {
  const Dataset ds = parse_libsvm("\n  +1 1:1  \r\n\n\t\n-1 2:2\n\n");
  REQUIRE(ds.count() == 2);
  REQUIRE(ds.dim == 2);
}

TEST_CASE("zero-one label mode remaps 0 to -1") {
  const ParseOptions opt{.zero_one_labels = true};
  const Dataset ds = parse_libsvm("0 1:1\n1 2:1\n", opt);
  REQUIRE(ds.samples[0].label == -1.0);
  REQUIRE(ds.samples[1].label == +1.0);
  REQUIRE_THROWS_AS(parse_libsvm("0 1:1\n", ParseOptions{}), ParseError);
  REQUIRE_THROWS_AS(parse_libsvm("-1 1:1\n", opt), ParseError);
}

TEST_CASE("parse errors carry the offending line number") {
  auto line_of = [](const char* text) {
    try {
      parse_libsvm(text);
    } catch (const ParseError& e) {
      return e.line;
    }
    return std::size_t{0};
  };
  REQUIRE(line_of("+1 1:1\nbogus 1:1\n") == 2);          // bad label
  REQUIRE(line_of("+1 2:1 2:2\n") == 1);                 // repeated index
  REQUIRE(line_of("+1 3:1 2:1\n") == 1);                 // decreasing index
  REQUIRE(line_of("+1 0:1\n") == 1);                     // index below 1
  REQUIRE(line_of("+1 a:1\n") == 1);                     // non-numeric index
  REQUIRE(line_of("+1 1:x\n") == 1);                     // non-numeric value
  REQUIRE(line_of("+1 1:1\n+1 1\n") == 2);               // missing colon
  REQUIRE(line_of("") == 1);                             // no samples at all
  REQUIRE(line_of("\n\n") > 0);                          // whitespace only
}

TEST_CASE("dimension override grows but never shrinks") {
  REQUIRE(parse_libsvm("+1 2:1\n", ParseOptions{.dim_override = 10}).dim == 10);
  REQUIRE_THROWS_AS(parse_libsvm("+1 5:1\n", ParseOptions{.dim_override = 2}), ParseError);
}

TEST_CASE("serialize and reparse reproduce the dataset exactly") {
  const Dataset ds = testsupport::synthetic_logistic(6, 50, 77);
  const Dataset back = parse_libsvm(serialize_libsvm(ds));
  REQUIRE(back.count() == ds.count());
  REQUIRE(back.dim == ds.dim);
  for (std::size_t i = 0; i < ds.count(); ++i) {
    REQUIRE(back.samples[i].label == ds.samples[i].label);
    REQUIRE(back.samples[i].idx == ds.samples[i].idx);
    REQUIRE(back.samples[i].val == ds.samples[i].val);  // %.17g round-trips doubles
  }
}

TEST_CASE("gzip files load through the same path") {
  const Dataset ds = testsupport::synthetic_logistic(4, 20, 3);
  const std::string text = serialize_libsvm(ds);
  const std::string path = "test_dataio_tmp.libsvm.gz";
  gzFile f = gzopen(path.c_str(), "wb");
  REQUIRE(f != nullptr);
  REQUIRE(gzwrite(f, text.data(), static_cast<unsigned>(text.size())) ==
          static_cast<int>(text.size()));
  gzclose(f);
  const Dataset back = load_dataset(path);
  std::remove(path.c_str());
  REQUIRE(back.count() == ds.count());
  REQUIRE(back.samples[7].val == ds.samples[7].val);
}

TEST_CASE("head and tail split by position") {
  const Dataset ds = parse_libsvm("+1 1:1\n-1 1:2\n+1 1:3\n-1 1:4\n");
  const Dataset h = ds.head(3), t = ds.tail(3);
  REQUIRE(h.count() == 3);
  REQUIRE(t.count() == 1);
  REQUIRE(h.dim == ds.dim);
  REQUIRE(t.samples[0].val[0] == 4.0);
  REQUIRE(ds.head(99).count() == 4);
  REQUIRE(ds.tail(99).count() == 0);
}

TEST_CASE("max_row_norm") {
  const Dataset ds = parse_libsvm("+1 1:3 2:4\n-1 1:1\n");
  REQUIRE(max_row_norm(ds) == 5.0);
}

TEST_CASE("with-replacement sampler is uniform") {
  IndexSampler s(SamplingMode::WithReplacement, 4, rng::Stream(11));
  const int n = 400000;
  std::vector<long> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[s.next()];
  REQUIRE(s.drawn() == static_cast<std::size_t>(n));
  const double expected = n / 4.0;
  double chi2 = 0;
  for (long c : counts) chi2 += (c - expected) * (c - expected) / expected;
  REQUIRE(chi2 < 16.27);
}

TEST_CASE("single-pass sampler walks one permutation then stops") {
  const std::size_t n = 257;
  IndexSampler s(SamplingMode::SinglePass, n, rng::Stream(13));
  std::vector<std::size_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(s.remaining() == n - i);
    seen.push_back(s.next());
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < n; ++i) REQUIRE(seen[i] == i);
  REQUIRE(s.remaining() == 0);
  REQUIRE_THROWS_AS(s.next(), ExhaustedError);

  // distinct seeds give distinct permutations (overwhelmingly)
  IndexSampler a(SamplingMode::SinglePass, n, rng::Stream(1));
  IndexSampler b(SamplingMode::SinglePass, n, rng::Stream(2));
  bool differ = false;
  for (std::size_t i = 0; i < n; ++i) differ = differ || (a.next() != b.next());
  REQUIRE(differ);
}

TEST_CASE("sampler rejects an empty dataset") {
  REQUIRE_THROWS_AS(IndexSampler(SamplingMode::WithReplacement, 0, rng::Stream(1)), ConfigError);
}
