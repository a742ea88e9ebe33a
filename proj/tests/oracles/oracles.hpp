#pragma once

// Reference implementations the library is checked against. Each one is
// written the slow, obvious way and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "bitref/mine.hpp"
#include "bitref/model/editor.hpp"

namespace oracle {

/// Full sort of every index by cosine (descending), ties by index; top k ids.
inline std::vector<std::size_t> brute_knn(const std::vector<std::vector<float>>& index,
                                          const std::vector<float>& query, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < index.size(); ++i) {
    double dot = 0.0;
    for (std::size_t d = 0; d < query.size(); ++d) dot += double(index[i][d]) * double(query[d]);
    all.emplace_back(std::clamp(dot, -1.0, 1.0), i);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
  return out;
}

/// Minimal number of unit edits turning `a` into `b`, by breadth-first search
/// over all strings reachable by single insertions, deletions and
/// substitutions from the alphabet.
inline std::size_t bfs_edit_distance(const std::string& a, const std::string& b,
                                     const std::string& alphabet) {
  if (a == b) return 0;
  const std::size_t cap = std::max(a.size(), b.size()) + 1;
  std::map<std::string, std::size_t> dist{{a, 0}};
  std::deque<std::string> queue{a};
  while (!queue.empty()) {
    const std::string s = queue.front();
    queue.pop_front();
    const std::size_t d = dist[s];
    std::vector<std::string> next;
    for (std::size_t i = 0; i < s.size(); ++i) next.push_back(s.substr(0, i) + s.substr(i + 1));
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (char c : alphabet) {
        if (c != s[i]) next.push_back(s.substr(0, i) + c + s.substr(i + 1));
      }
    }
    if (s.size() < cap) {
      for (std::size_t i = 0; i <= s.size(); ++i) {
        for (char c : alphabet) next.push_back(s.substr(0, i) + c + s.substr(i));
      }
    }
    for (auto& n : next) {
      if (dist.count(n)) continue;
      if (n == b) return d + 1;
      dist[n] = d + 1;
      queue.push_back(std::move(n));
    }
  }
  return SIZE_MAX;
}

/// All strings over `alphabet` of length 0..max_len.
inline std::vector<std::string> all_strings(const std::string& alphabet, std::size_t max_len) {
  std::vector<std::string> out{""};
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i) {
      for (char c : alphabet) out.push_back(out[i] + c);
    }
    begin = end;
  }
  return out;
}

struct GradCheck {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;
  /// Largest error per tensor-name prefix group.
  std::map<std::string, double> by_group;
};

/// Central differences on every parameter of a double-precision editor.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck finite_difference_check(bitref::EditorModel64& model,
                                         const std::vector<bitref::TrainingExample>& batch,
                                         double smoothing, double step, double floor = 1e-6) {
  const auto analytic = model.loss_and_grads(batch, smoothing).grads;
  auto& p = model.net().params();
  GradCheck out;
  for (const auto& t : model.net().layout().tensors()) {
    const std::string group = t.name.substr(0, t.name.rfind('.'));
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + step;
      const double up = model.loss(batch, smoothing).loss;
      p[i] = orig - step;
      const double down = model.loss(batch, smoothing).loss;
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      ++out.checked;
      out.by_group[group] = std::max(out.by_group[group], rel);
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = t.name + "[" + std::to_string(i - t.offset) + "]";
      }
    }
  }
  return out;
}

/// Token-mean label-smoothed NLL recomputed from per-step log-probabilities
/// of the incremental decoder, for a single example.
inline double stepwise_nll(const bitref::EditorModel& model, const bitref::TrainingExample& ex) {
  using namespace bitref;
  nn::PackedBatch b;
  const auto enc = encode_input(ex, model.config().max_len);
  std::vector<std::uint8_t> lang;
  for (auto t : enc.lang_tags) lang.push_back(t == special::kLangE);
  b.add_source(enc.ids, enc.positions, lang);
  const auto mem = model.net().encode(b);
  auto cache = model.net().new_cache();
  TokenSeq in{special::kBos};
  in.insert(in.end(), ex.target.begin(), ex.target.end());
  TokenSeq out = ex.target;
  out.push_back(special::kEos);
  double nll = 0.0;
  for (std::size_t t = 0; t < in.size(); ++t) {
    const auto logp = model.net().step({&mem[0]}, {&cache}, {in[t]});
    nll -= logp(0, out[t]);
  }
  return nll / static_cast<double>(in.size());
}

}  // namespace oracle
