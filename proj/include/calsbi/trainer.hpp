#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "calsbi/covreg.hpp"
#include "calsbi/estimators/checkpoint.hpp"
#include "calsbi/estimators/npe.hpp"
#include "calsbi/estimators/nre.hpp"
#include "calsbi/problems/dataset.hpp"
#include "calsbi/problems/problems.hpp"

namespace calsbi {

// Non-finite loss or gradient during training, with its coordinates.
class NumericAbort : public NumericError {
 public:
  NumericAbort(std::size_t epoch, std::size_t batch, const std::string& what)
      : NumericError("numeric abort at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " +
                     what),
        epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

struct TrainConfig {
  std::string method = "npe";
  std::string problem = "gaussian-linear";
  std::size_t epochs = 500;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double clip = 5.0;
  bool use_regularizer = true;
  covreg::RegConfig reg;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::size_t embedding_dim = 16;
  std::size_t coupling_layers = 4;

  void validate(std::size_t budget) const {
    if (method != "npe" && method != "nre") throw std::invalid_argument("unknown method '" + method + "'");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
    if (budget < batch_size) {
      throw std::invalid_argument("simulation budget " + std::to_string(budget) + " is below the batch size " +
                                  std::to_string(batch_size));
    }
    if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
    if (!(clip > 0)) throw std::invalid_argument("clip norm must be positive");
    if (!(weight_decay >= 0)) throw std::invalid_argument("weight decay must be non-negative");
    if (!(validation_fraction >= 0 && validation_fraction < 1))
      throw std::invalid_argument("validation fraction must lie in [0, 1)");
    if (use_regularizer) reg.validate();
  }

  io::KeyValue to_kv() const {
    io::KeyValue kv;
    kv.set("train.method", method);
    kv.set("train.problem", problem);
    kv.set("train.epochs", std::uint64_t{epochs});
    kv.set("train.batch", std::uint64_t{batch_size});
    kv.set("train.lr", learning_rate);
    kv.set("train.weight_decay", weight_decay);
    kv.set("train.clip", clip);
    kv.set("train.seed", seed);
    kv.set("train.validation_fraction", validation_fraction);
    kv.set("train.reg", use_regularizer ? covreg::to_string(reg.mode) : std::string("none"));
    kv.set("train.loss_form", covreg::to_string(reg.loss_form));
    kv.set("train.lambda", reg.lambda);
    kv.set("train.L", std::uint64_t{reg.samples});
    kv.set("train.temperature", reg.temperature);
    kv.set("train.sort_strength", reg.sort_strength);
    kv.set("train.levels", io::join_doubles(reg.levels));
    return kv;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double base_loss = 0.0;
  double reg_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;       // mean pre-clip norm over steps
  double grad_norm_post = 0.0;  // largest post-clip norm over steps
  double degenerate_frac = 0.0;
  double val_loss = 0.0;  // base loss on the held-out split, NaN without one
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double base_loss = 0.0;
  double reg_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm_pre = 0.0;
  double grad_norm_post = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  std::vector<std::string> warnings;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::filesystem::path checkpoint_path;
  std::filesystem::path best_checkpoint_path;
  double seconds = 0.0;
};

struct TrainResult {
  std::unique_ptr<Estimator> model;
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  TrainReport report;
};

inline std::unique_ptr<Estimator> make_estimator(const TrainConfig& cfg, const Problem& problem, Rng& rng) {
  if (cfg.method == "npe") {
    NpeConfig c{problem.dim_theta(), problem.dim_x(), cfg.embedding_dim, cfg.hidden, cfg.hidden_layers,
                cfg.coupling_layers};
    return std::make_unique<NpeFlow>(c, rng);
  }
  if (cfg.method == "nre") {
    NreConfig c{problem.dim_theta(), problem.dim_x(), cfg.embedding_dim, cfg.hidden, cfg.hidden_layers};
    return std::make_unique<NreModel>(c, problem.prior(), rng);
  }
  throw std::invalid_argument("unknown method '" + cfg.method + "'");
}

// −(1/N) Σ log p̂(θ_i | x_i).
inline Value npe_base_loss(const NpeFlow& flow, const Matrix& theta, const Matrix& x, const Value* embedding = nullptr) {
  Value emb = embedding ? *embedding : flow.embed(to_value(x));
  Value lp = flow.log_density(to_value(theta), emb);
  const auto d = lp.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!std::isfinite(d[i])) throw NumericError("npe loss: non-finite log density for sample " + std::to_string(i));
  return diff::neg(diff::mean(lp));
}

// Binary cross-entropy over N positives (θ_i, x_i) and N negatives
// (θ_{i+1 mod N}, x_i). Batches arrive shuffled, so the cyclic shift is a
// random derangement of the original rows.
inline Value nre_base_loss(const NreModel& model, const Matrix& theta, const Matrix& x, const Value* embedding = nullptr) {
  const auto n = static_cast<std::size_t>(theta.rows());
  if (n < 2) throw std::invalid_argument("nre loss: batch size must be at least 2 to form negatives");
  Value emb = embedding ? *embedding : model.embed(to_value(x));
  Value t = to_value(theta);
  std::vector<std::size_t> shifted(n);
  for (std::size_t i = 0; i < n; ++i) shifted[i] = (i + 1) % n;
  Value pos = model.logit(t, emb);
  Value neg = model.logit(diff::gather_rows(t, shifted), emb);
  // -log σ(z) = softplus(-z), -log(1 - σ(z)) = softplus(z)
  Value l = diff::add(diff::mean(diff::softplus(diff::neg(pos))), diff::mean(diff::softplus(neg)));
  return diff::scale(l, 0.5);
}

inline Value base_loss(const Estimator& model, const Matrix& theta, const Matrix& x, const Value* embedding = nullptr) {
  if (const auto* f = dynamic_cast<const NpeFlow*>(&model)) return npe_base_loss(*f, theta, x, embedding);
  if (const auto* r = dynamic_cast<const NreModel*>(&model)) return nre_base_loss(*r, theta, x, embedding);
  throw std::invalid_argument("no base loss for method '" + model.method() + "'");
}

inline void write_train_csv(std::ostream& os, const TrainReport& r) {
  os << "epoch,base_loss,reg_loss,total_loss,grad_norm,degenerate_frac,val_loss\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << ',' << io::format_g17(e.base_loss) << ',' << io::format_g17(e.reg_loss) << ','
       << io::format_g17(e.total_loss) << ',' << io::format_g17(e.grad_norm) << ','
       << io::format_g17(e.degenerate_frac) << ',' << io::format_g17(e.val_loss) << '\n';
  }
}

inline void write_steps_csv(std::ostream& os, const TrainReport& r) {
  os << "epoch,batch,base_loss,reg_loss,total_loss,grad_norm_pre,grad_norm_post,seconds\n";
  for (const auto& s : r.steps) {
    os << s.epoch << ',' << s.batch << ',' << io::format_g17(s.base_loss) << ',' << io::format_g17(s.reg_loss) << ','
       << io::format_g17(s.total_loss) << ',' << io::format_g17(s.grad_norm_pre) << ','
       << io::format_g17(s.grad_norm_post) << ',' << io::format_g17(s.seconds) << '\n';
  }
}

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  bool record_steps = true;
  std::size_t max_steps = 0;  // 0: no limit; used for timing runs
  std::function<void(const EpochRecord&)> on_epoch;
};

// Minimizes base + λ·R with AdamW after global-norm clipping.
//
// Streams: model init, train/validation split, epoch shuffles and regularizer
// proposals each draw from their own substream of the seed, so switching the
// regularizer on or off never perturbs the others. With λ = 0 the regularizer
// is still evaluated for logging but kept out of the graph, which makes the
// optimization bit-identical to an unregularized run.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opts = {}) {
  cfg.validate(data.count());
  if (data.problem != cfg.problem) {
    throw std::invalid_argument("dataset was simulated for '" + data.problem + "' but the run targets '" + cfg.problem +
                                "'");
  }
  const auto problem = make_problem(cfg.problem);
  if (data.dim_theta() != problem->dim_theta() || data.dim_x() != problem->dim_x())
    throw std::invalid_argument("dataset dimensions do not match problem '" + cfg.problem + "'");

  const auto t_start = std::chrono::steady_clock::now();
  Rng init_rng = substream(cfg.seed, Stream::init);
  Rng split_rng = substream(cfg.seed, Stream::split);
  Rng shuffle_rng = substream(cfg.seed, Stream::shuffle);
  Rng proposal_rng = substream(cfg.seed, Stream::proposal);

  TrainResult result;
  result.model = make_estimator(cfg, *problem, init_rng);
  Estimator& model = *result.model;
  auto params = model.parameters();
  diff::AdamW opt({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  PriorProposal proposal(problem->prior());

  std::vector<std::size_t> order(data.count());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), split_rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(data.count())));
  if (data.count() - n_val < cfg.batch_size) n_val = data.count() - cfg.batch_size;
  if (n_val == 1) n_val = 0;  // a single row cannot form NRE negatives
  const Dataset val = data.subset({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val)});
  std::vector<std::size_t> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(train_rows.begin(), train_rows.end());

  const bool reg_on = cfg.use_regularizer;
  const double lambda = reg_on ? cfg.reg.lambda : 0.0;
  std::vector<double> best_params;
  std::size_t step_count = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> perm = train_rows;
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0, degenerate_batches = 0;

    for (std::size_t start = 0, b = 0; start < perm.size(); start += cfg.batch_size, ++b) {
      const std::size_t m = std::min(cfg.batch_size, perm.size() - start);
      if (m < 2) break;
      const auto step_t0 = std::chrono::steady_clock::now();
      const Dataset batch = data.subset({perm.begin() + static_cast<std::ptrdiff_t>(start),
                                         perm.begin() + static_cast<std::ptrdiff_t>(start + m)});
      StepRecord sr{epoch, b};
      try {
        Value emb = model.embed(to_value(batch.x));
        Value base = base_loss(model, batch.theta, batch.x, &emb);
        Value total = base;
        if (reg_on) {
          if (lambda > 0) {
            auto r = covreg::regularizer(model, batch.theta, batch.x, cfg.reg, proposal, proposal_rng, &emb);
            total = diff::add(base, diff::scale(r.loss, lambda));
            sr.reg_loss = r.loss.item();
            rec.degenerate_frac += r.degenerate_fraction;
            degenerate_batches += r.degenerate_warning ? 1 : 0;
          } else {
            diff::NoGradGuard no_grad;
            auto r = covreg::regularizer(model, batch.theta, batch.x, cfg.reg, proposal, proposal_rng);
            sr.reg_loss = r.loss.item();
            rec.degenerate_frac += r.degenerate_fraction;
            degenerate_batches += r.degenerate_warning ? 1 : 0;
          }
        }
        sr.base_loss = base.item();
        sr.total_loss = total.item();
        if (!std::isfinite(sr.total_loss)) throw NumericError("total loss is not finite");
        total.backward();
        sr.grad_norm_pre = diff::clip_grad_norm(params, cfg.clip);
        sr.grad_norm_post = diff::grad_norm(params);
        opt.step(params);
      } catch (const NumericAbort&) {
        throw;
      } catch (const NumericError& e) {
        throw NumericAbort(epoch, b, e.what());
      }
      sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - step_t0).count();
      rec.base_loss += sr.base_loss;
      rec.reg_loss += sr.reg_loss;
      rec.total_loss += sr.total_loss;
      rec.grad_norm += sr.grad_norm_pre;
      rec.grad_norm_post = std::max(rec.grad_norm_post, sr.grad_norm_post);
      ++batches;
      if (opts.record_steps) result.report.steps.push_back(sr);
      if (opts.max_steps && ++step_count >= opts.max_steps) break;
    }

    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.base_loss /= nb;
    rec.reg_loss /= nb;
    rec.total_loss /= nb;
    rec.grad_norm /= nb;
    rec.degenerate_frac /= nb;
    if (degenerate_batches > 0) {
      result.report.warnings.push_back("epoch " + std::to_string(epoch) + ": " + std::to_string(degenerate_batches) +
                                       " batch(es) with degenerate importance weights in over half the rows");
    }

    if (n_val >= 2) {
      diff::NoGradGuard no_grad;
      try {
        rec.val_loss = base_loss(model, val.theta, val.x).item();
      } catch (const NumericError&) {
        rec.val_loss = std::numeric_limits<double>::infinity();
      }
    } else {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    // Without a validation split the last epoch counts as best.
    if (n_val < 2 || rec.val_loss < result.report.best_val_loss) {
      if (n_val >= 2) result.report.best_val_loss = rec.val_loss;
      result.report.best_epoch = epoch;
      best_params.clear();
      for (const auto& p : params) best_params.insert(best_params.end(), p.value.data().begin(), p.value.data().end());
    }
    result.report.epochs.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (opts.max_steps && step_count >= opts.max_steps) break;
  }

  io::KeyValue extra = cfg.to_kv();
  extra.set("problem", cfg.problem);
  result.final_checkpoint = make_checkpoint(model, extra);
  result.best_checkpoint = result.final_checkpoint;
  result.best_checkpoint.config.set("train.best_epoch", std::uint64_t{result.report.best_epoch});
  for (std::size_t k = 0, off = 0; k < result.best_checkpoint.parameters.size(); ++k) {
    auto& v = result.best_checkpoint.parameters[k].values;
    std::copy(best_params.begin() + static_cast<std::ptrdiff_t>(off),
              best_params.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
    off += v.size();
  }
  result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    result.report.checkpoint_path = *opts.out_dir / "model.calc";
    result.report.best_checkpoint_path = *opts.out_dir / "model_best.calc";
    save_checkpoint(result.report.checkpoint_path, result.final_checkpoint);
    save_checkpoint(result.report.best_checkpoint_path, result.best_checkpoint);
    std::ofstream csv(*opts.out_dir / "train.csv");
    write_train_csv(csv, result.report);
    if (opts.record_steps) {
      std::ofstream steps(*opts.out_dir / "steps.csv");
      write_steps_csv(steps, result.report);
    }
  }
  return result;
}

}  // namespace calsbi
