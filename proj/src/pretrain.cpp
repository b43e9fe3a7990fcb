#include "ae/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ae/ops.hpp"

namespace ae {

AdamW::AdamW(std::vector<Tensor> params, double lr_, double weight_decay_)
    : lr(lr_), weight_decay(weight_decay_), params_(std::move(params)) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
    v_[i].assign(static_cast<size_t>(params_[i].numel()), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    double* x = p.mutable_data();
    const double* g = p.grad_allocated() ? p.grad_data() : nullptr;
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g ? g[j] : 0.0;
      m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
      v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      // Decoupled decay: the regularizer never touches the moments.
      x[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x[j]);
    }
  }
}

void split_corpus(size_t count, double val_fraction, uint64_t seed,
                  std::vector<size_t>& train_idx, std::vector<size_t>& val_idx) {
  std::vector<size_t> order(count);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  size_t val_count = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(count)));
  val_count = std::min(val_count, count > 1 ? count - 1 : size_t{0});
  train_idx.assign(order.begin(), order.end() - static_cast<ptrdiff_t>(val_count));
  val_idx.assign(order.end() - static_cast<ptrdiff_t>(val_count), order.end());
}

namespace {

struct Batch {
  Tensor pixels;
  std::vector<int64_t> labels;
};

Batch make_batch(const std::vector<LabeledPatch>& corpus, const std::vector<size_t>& idx,
                 size_t from, size_t to) {
  const Tensor& first = corpus[idx[from]].pixels;
  const int64_t c = first.extent(0), h = first.extent(1), w = first.extent(2);
  const int64_t b = static_cast<int64_t>(to - from);
  Batch out;
  out.pixels = Tensor::zeros({b, c, h, w});
  double* d = out.pixels.mutable_data();
  const int64_t plane = c * h * w;
  for (size_t i = from; i < to; ++i) {
    const LabeledPatch& lp = corpus[idx[i]];
    std::copy_n(lp.pixels.data(), plane, d + static_cast<int64_t>(i - from) * plane);
    out.labels.push_back(lp.label);
  }
  return out;
}

int64_t argmax_row(const double* row, int64_t k) {
  int64_t best = 0;
  for (int64_t j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

EvalResult evaluate_classifier(BamClassifier& clf, const std::vector<LabeledPatch>& corpus,
                               const std::vector<size_t>& idx, int64_t batch_size) {
  if (idx.empty()) throw ValueError("evaluation set is empty");
  EvalResult res;
  double loss_sum = 0.0;
  int64_t correct = 0;
  for (size_t from = 0; from < idx.size(); from += static_cast<size_t>(batch_size)) {
    const size_t to = std::min(idx.size(), from + static_cast<size_t>(batch_size));
    Batch b = make_batch(corpus, idx, from, to);
    Tensor logits = clf.forward(b.pixels, /*train=*/false);
    Tensor loss = ops::cross_entropy(logits, b.labels);
    loss_sum += loss.at(0) * static_cast<double>(to - from);
    const double* lp = logits.data();
    const int64_t k = logits.extent(1);
    for (size_t i = from; i < to; ++i) {
      const int64_t pred = argmax_row(lp + static_cast<int64_t>(i - from) * k, k);
      const int64_t truth = b.labels[i - from];
      res.confusion[static_cast<size_t>(truth)][static_cast<size_t>(pred)]++;
      if (pred == truth) ++correct;
    }
  }
  res.loss = loss_sum / static_cast<double>(idx.size());
  res.accuracy = static_cast<double>(correct) / static_cast<double>(idx.size());
  return res;
}

TrainResult train_classifier(BamClassifier& clf, const std::vector<LabeledPatch>& corpus,
                             const TrainConfig& cfg,
                             const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (corpus.empty()) throw ValueError("training corpus is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw ValueError("epochs and batch size must be positive");
  }

  std::vector<size_t> train_idx, val_idx;
  split_corpus(corpus.size(), cfg.val_fraction, cfg.seed, train_idx, val_idx);
  if (train_idx.empty() || val_idx.empty()) {
    throw ValueError("corpus too small to split into train and validation");
  }

  ModuleGraph graph = clf.graph();
  std::vector<Tensor> params;
  for (const ModuleGraph::Entry& e : graph.params()) {
    params.push_back(e.tensor);
    params.back().set_requires_grad(true);
  }
  AdamW opt(params, cfg.learning_rate, cfg.weight_decay);

  TrainResult result;
  {
    EvalResult ev = evaluate_classifier(clf, corpus, val_idx, cfg.batch_size);
    result.initial_val_loss = ev.loss;
    result.initial_val_accuracy = ev.accuracy;
  }

  // Epoch shuffles draw from their own stream so the split stays the same
  // function of the seed regardless of epoch count.
  Rng shuffle_rng(cfg.seed ^ 0x5bd1e9955bd1e995ULL);
  int64_t step = 0;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx);
    double loss_sum = 0.0;
    int64_t correct = 0;
    for (size_t from = 0; from < train_idx.size(); from += static_cast<size_t>(cfg.batch_size)) {
      const size_t to = std::min(train_idx.size(), from + static_cast<size_t>(cfg.batch_size));
      Batch b = make_batch(corpus, train_idx, from, to);
      double batch_loss;
      {
        Tape tape;
        TapeScope scope(tape);
        Tensor logits = clf.forward(b.pixels, /*train=*/true);
        Tensor loss = ops::cross_entropy(logits, b.labels);
        batch_loss = loss.at(0);
        if (!std::isfinite(batch_loss)) {
          throw TrainingError("non-finite loss at step " + std::to_string(step));
        }
        tape.run_backward(loss);
        const double* lp = logits.data();
        const int64_t k = logits.extent(1);
        for (size_t i = from; i < to; ++i) {
          if (argmax_row(lp + static_cast<int64_t>(i - from) * k, k) == b.labels[i - from]) {
            ++correct;
          }
        }
      }
      opt.step();
      ++step;
      loss_sum += batch_loss * static_cast<double>(to - from);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(train_idx.size());
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_idx.size());
    EvalResult ev = evaluate_classifier(clf, corpus, val_idx, cfg.batch_size);
    em.val_loss = ev.loss;
    em.val_accuracy = ev.accuracy;
    result.epochs.push_back(em);
    result.final_val_accuracy = em.val_accuracy;
    if (on_epoch) on_epoch(em);
  }
  return result;
}

}  // namespace ae
