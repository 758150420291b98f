#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dsm/core/error.hpp"
#include "dsm/quality/dataset.hpp"
#include "dsm/quality/model.hpp"

namespace dsm::quality {

using Matrix = std::vector<std::vector<double>>;

struct TrainOptions {
  double lr = 0.1;
  double l2 = 1e-3;
  int epochs = 2000;
};

struct TrainResult {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> loss_trace; // loss before the first step, then after each step
};

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double dot(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a[i] * b[i];
  return s;
}

/// Mean log loss plus (l2/2)|w|^2; the bias is not penalized.
inline double log_loss(const Matrix &X, const std::vector<double> &y, const std::vector<double> &w, double b,
                       double l2) {
  double s = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    double z = dot(X[i], w) + b;
    s += softplus(z) - y[i] * z;
  }
  return s / static_cast<double>(X.size()) + 0.5 * l2 * dot(w, w);
}

inline void log_loss_gradient(const Matrix &X, const std::vector<double> &y, const std::vector<double> &w, double b,
                              double l2, std::vector<double> &gw, double &gb) {
  const double n = static_cast<double>(X.size());
  gw.assign(w.size(), 0.0);
  gb = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    double r = sigmoid(dot(X[i], w) + b) - y[i];
    for (std::size_t k = 0; k < w.size(); ++k)
      gw[k] += r * X[i][k];
    gb += r;
  }
  for (std::size_t k = 0; k < w.size(); ++k)
    gw[k] = gw[k] / n + l2 * w[k];
  gb /= n;
}

/// Full-batch gradient descent from w = 0, b = 0.
inline TrainResult train_logistic(const Matrix &X, const std::vector<double> &y, const TrainOptions &opt = {}) {
  if (X.empty() || X.size() != y.size())
    throw Error(Errc::invariant_violation, "train", "X and y disagree in length");
  const std::size_t d = X[0].size();
  for (const auto &row : X)
    if (row.size() != d)
      throw Error(Errc::invariant_violation, "train", "ragged X");
  if (!(opt.lr > 0) || !(opt.l2 >= 0) || opt.epochs < 0)
    throw Error(Errc::invalid_value, "train", "need lr > 0, l2 >= 0, epochs >= 0");
  TrainResult r;
  r.w.assign(d, 0.0);
  std::vector<double> gw;
  double gb = 0;
  auto record = [&] {
    double l = log_loss(X, y, r.w, r.b, opt.l2);
    r.loss_trace.push_back(l);
    if (!std::isfinite(l))
      throw Error(Errc::non_finite_loss, "train", "loss diverged after " + std::to_string(r.loss_trace.size() - 1) +
                                                      " epochs");
  };
  record();
  for (int e = 0; e < opt.epochs; ++e) {
    log_loss_gradient(X, y, r.w, r.b, opt.l2, gw, gb);
    for (std::size_t k = 0; k < d; ++k)
      r.w[k] -= opt.lr * gw[k];
    r.b -= opt.lr * gb;
    record();
  }
  return r;
}

/// Area under the ROC curve (Mann-Whitney, ties count half).
inline double auc(const std::vector<double> &score, const std::vector<double> &y) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return score[a] < score[b]; });
  double pos = 0, neg = 0, rank_sum = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && score[idx[j]] == score[idx[i]])
      ++j;
    double avg_rank = (static_cast<double>(i + j + 1)) / 2.0; // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (y[idx[k]] > 0.5)
        rank_sum += avg_rank;
    i = j;
  }
  for (double v : y)
    (v > 0.5 ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw Error(Errc::single_class, "auc", "needs both classes");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

inline double accuracy(const std::vector<double> &p, const std::vector<double> &y, double cut = 0.5) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    ok += ((p[i] >= cut) == (y[i] > 0.5)) ? 1 : 0;
  return p.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(p.size());
}

struct TrainingReport {
  QualityModel model;
  std::vector<double> loss_trace;
  std::vector<std::string> dropped;
  std::vector<std::string> train_sessions, test_sessions;
  std::size_t train_rows = 0, test_rows = 0;
  double test_auc = 0, test_accuracy = 0, train_auc = 0;
};

/// Splits by session, standardizes on the training rows, trains and
/// evaluates on the held-out sessions. version and created_at are left
/// for the caller.
inline TrainingReport train_model(const std::vector<SessionRecord> &rows, const std::vector<std::string> &names,
                                  std::uint64_t seed, const TrainOptions &opt = {}, double threshold = 0.7) {
  if (rows.empty())
    throw Error(Errc::too_few_records, "dataset", "no records");
  auto train_ids = training_sessions(rows, seed);
  std::vector<SessionRecord> train, test;
  std::set<std::string> test_ids;
  for (const auto &r : rows) {
    if (train_ids.count(r.session_id)) {
      train.push_back(r);
    } else {
      test.push_back(r);
      test_ids.insert(r.session_id);
    }
  }
  auto ds = build_dataset(train, names);
  auto tr = train_logistic(ds.X, ds.y, opt);

  TrainingReport rep;
  rep.model.feature_names = ds.names;
  rep.model.mu = ds.mu;
  rep.model.sigma = ds.sigma;
  rep.model.w = tr.w;
  rep.model.b = tr.b;
  rep.model.threshold = threshold;
  rep.model.trained_on.assign(train_ids.begin(), train_ids.end());
  rep.loss_trace = tr.loss_trace;
  rep.dropped = ds.dropped;
  rep.train_sessions.assign(train_ids.begin(), train_ids.end());
  rep.test_sessions.assign(test_ids.begin(), test_ids.end());
  rep.train_rows = train.size();
  rep.test_rows = test.size();

  std::vector<double> p, y;
  for (const auto &x : ds.X)
    p.push_back(sigmoid(dot(x, tr.w) + tr.b));
  rep.train_auc = auc(p, ds.y);
  p.clear();
  rep.model.version = "unversioned";
  for (const auto &r : test) {
    p.push_back(predict_risk(rep.model, r.features));
    y.push_back(*r.label);
  }
  if (!test.empty()) {
    bool pos = std::find(y.begin(), y.end(), 1.0) != y.end();
    bool neg = std::find(y.begin(), y.end(), 0.0) != y.end();
    rep.test_auc = (pos && neg) ? auc(p, y) : std::nan("");
    rep.test_accuracy = accuracy(p, y);
  }
  return rep;
}

} // namespace dsm::quality
