#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// One labeled sparse row; idx is 0-based and strictly increasing.
struct Sample {
  std::vector<std::int32_t> idx;
  std::vector<double> val;
  double label = 0;  // -1 or +1

  double dot(std::span<const double> x) const {
    double s = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) s += val[j] * x[static_cast<std::size_t>(idx[j])];
    return s;
  }
  double norm() const {
    double s = 0;
    for (double v : val) s += v * v;
    return std::sqrt(s);
  }
};

struct Dataset {
  std::vector<Sample> samples;
  int dim = 0;

  std::size_t count() const { return samples.size(); }
  std::size_t positives() const {
    std::size_t p = 0;
    for (const auto& s : samples) p += (s.label > 0);
    return p;
  }
  // First n rows / all rows from n on; deterministic split by position.
  Dataset head(std::size_t n) const {
    Dataset d;
    d.dim = dim;
    d.samples.assign(samples.begin(), samples.begin() + std::min(n, samples.size()));
    return d;
  }
  Dataset tail(std::size_t skip) const {
    Dataset d;
    d.dim = dim;
    d.samples.assign(samples.begin() + std::min(skip, samples.size()), samples.end());
    return d;
  }
};

inline double max_row_norm(const Dataset& ds) {
  double m = 0;
  for (const auto& s : ds.samples) m = std::max(m, s.norm());
  return m;
}

struct ParseOptions {
  bool zero_one_labels = false;  // accept {0,1} and remap 0 -> -1
  int dim_override = 0;          // 0: infer as max index + 1
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

inline double parse_double(std::string_view tok, std::size_t line, const char* what) {
  double v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
  return v;
}

inline long parse_long(std::string_view tok, std::size_t line, const char* what) {
  long v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

inline Dataset parse_libsvm(std::string_view text, const ParseOptions& opt = {}) {
  Dataset ds;
  int max_index = -1;  // 0-based
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
    pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;

    Sample s;
    std::size_t tpos = 0;
    bool have_label = false;
    while (tpos < line.size()) {
      while (tpos < line.size() && (line[tpos] == ' ' || line[tpos] == '\t')) ++tpos;
      if (tpos >= line.size()) break;
      std::size_t tend = tpos;
      while (tend < line.size() && line[tend] != ' ' && line[tend] != '\t') ++tend;
      std::string_view tok = line.substr(tpos, tend - tpos);
      tpos = tend;

      if (!have_label) {
        have_label = true;
        if (opt.zero_one_labels) {
          if (tok == "0")
            s.label = -1;
          else if (tok == "1" || tok == "+1")
            s.label = +1;
          else
            throw ParseError(line_no, "label '" + std::string(tok) + "' not in {0,1}");
        } else {
          if (tok == "+1" || tok == "1")
            s.label = +1;
          else if (tok == "-1")
            s.label = -1;
          else
            throw ParseError(line_no, "label '" + std::string(tok) + "' not in {-1,+1}");
        }
        continue;
      }

      const std::size_t colon = tok.find(':');
      if (colon == std::string_view::npos)
        throw ParseError(line_no, "feature token '" + std::string(tok) + "' has no ':'");
      const long one_based = detail::parse_long(tok.substr(0, colon), line_no, "feature index");
      if (one_based < 1) throw ParseError(line_no, "feature index " + std::to_string(one_based) + " < 1");
      const double v = detail::parse_double(tok.substr(colon + 1), line_no, "feature value");
      const std::int32_t zero_based = static_cast<std::int32_t>(one_based - 1);
      if (!s.idx.empty() && zero_based <= s.idx.back())
        throw ParseError(line_no, "feature indices not strictly increasing");
      s.idx.push_back(zero_based);
      s.val.push_back(v);
      max_index = std::max(max_index, static_cast<int>(zero_based));
    }
    if (!have_label) continue;  // whitespace-only line
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ParseError(line_no == 0 ? 1 : line_no, "no samples");
  ds.dim = max_index + 1;
  if (opt.dim_override > 0) {
    if (opt.dim_override < ds.dim)
      throw ParseError(1, "dim override " + std::to_string(opt.dim_override) + " < observed dim " +
                              std::to_string(ds.dim));
    ds.dim = opt.dim_override;
  }
  return ds;
}

inline std::string serialize_libsvm(const Dataset& ds) {
  std::string out;
  char buf[64];
  for (const auto& s : ds.samples) {
    out += (s.label > 0) ? "+1" : "-1";
    for (std::size_t j = 0; j < s.idx.size(); ++j) {
      std::snprintf(buf, sizeof buf, " %d:%.17g", s.idx[j] + 1, s.val[j]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// Reads a whole file; a ".gz" extension selects gzip decoding.
inline std::string read_file_maybe_gz(const std::string& path) {
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw Error("cannot open '" + path + "'");
    std::string data;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) data.append(buf, static_cast<std::size_t>(n));
    const bool bad = (n < 0);
    gzclose(f);
    if (bad) throw Error("gzip read failed for '" + path + "'");
    return data;
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Dataset load_dataset(const std::string& path, const ParseOptions& opt = {}) {
  return parse_libsvm(read_file_maybe_gz(path), opt);
}

enum class SamplingMode { WithReplacement, SinglePass };

// Per-machine index source. SinglePass walks one random permutation and
// signals exhaustion rather than repeating data.
class IndexSampler {
 public:
  IndexSampler(SamplingMode mode, std::size_t count, rng::Stream stream)
      : mode_(mode), count_(count), stream_(stream) {
    if (count_ == 0) throw ConfigError("sampler over empty dataset");
    if (mode_ == SamplingMode::SinglePass) {
      perm_.resize(count_);
      std::iota(perm_.begin(), perm_.end(), std::uint32_t{0});
      for (std::size_t i = count_ - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(stream_.next_below(i + 1));
        std::swap(perm_[i], perm_[j]);
      }
    }
  }

  std::size_t next() {
    ++drawn_;
    if (mode_ == SamplingMode::WithReplacement)
      return static_cast<std::size_t>(stream_.next_below(count_));
    if (pos_ >= count_)
      throw ExhaustedError("single-pass sampler exhausted after " + std::to_string(count_) + " draws");
    return perm_[pos_++];
  }

  std::size_t drawn() const { return drawn_; }
  std::size_t remaining() const {
    return mode_ == SamplingMode::WithReplacement ? static_cast<std::size_t>(-1) : count_ - pos_;
  }

 private:
  SamplingMode mode_;
  std::size_t count_;
  rng::Stream stream_;
  std::vector<std::uint32_t> perm_;
  std::size_t pos_ = 0;
  std::size_t drawn_ = 0;
};

}  // namespace fedsim
