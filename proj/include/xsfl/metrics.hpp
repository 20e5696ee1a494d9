#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xsfl/errors.hpp"

namespace xsfl {

struct Scores {
  double acc = 0.0;
  double pre = 0.0;
  double spe = 0.0;
  double f1 = 0.0;
  double rec = 0.0;
};

namespace detail {

inline double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

// One-vs-rest scores for class `positive`; undefined ratios are 0.
inline Scores one_vs_rest(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                          std::size_t positive) {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, t = truth[i] == positive;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
    tn += !p && !t;
  }
  Scores s;
  s.acc = (tp + tn) / static_cast<double>(pred.size());
  s.pre = ratio(tp, tp + fp);
  s.rec = ratio(tp, tp + fn);
  s.spe = ratio(tn, tn + fp);
  s.f1 = ratio(2 * s.pre * s.rec, s.pre + s.rec);
  return s;
}

}  // namespace detail

/// ACC, PRE, SPE, F1, REC with class 1 positive; for more than two classes,
/// PRE/SPE/F1/REC are macro averages over one-vs-rest and ACC is plain accuracy.
inline Scores compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                              std::size_t classes = 2) {
  if (predictions.size() != labels.size()) throw ContractError("predictions and labels differ in length");
  if (predictions.empty()) throw ContractError("metrics of an empty evaluation set");
  if (classes < 2) throw ParameterError("at least two classes are required");
  if (classes == 2) return detail::one_vs_rest(predictions, labels, 1);
  Scores m;
  double correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  for (std::size_t c = 0; c < classes; ++c) {
    const Scores s = detail::one_vs_rest(predictions, labels, c);
    m.pre += s.pre;
    m.spe += s.spe;
    m.f1 += s.f1;
    m.rec += s.rec;
  }
  const double k = static_cast<double>(classes);
  m.acc = correct / static_cast<double>(labels.size());
  m.pre /= k;
  m.spe /= k;
  m.f1 /= k;
  m.rec /= k;
  return m;
}

}  // namespace xsfl
