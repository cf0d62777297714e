#include "mapo/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mapo::train {

namespace nd = mapo::ndgrad;

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state,
               const AdamConfig& hyper, double lr) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: gradient size " + std::to_string(grads.size()) +
                                " != parameter size " + std::to_string(params.size()));
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: moment size mismatch");
  state.step += 1;
  const double b1 = hyper.beta1, b2 = hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + hyper.eps) + hyper.weight_decay * params[i]);
  }
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("train config: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  // lr = 0 is allowed as a diagnostic no-op run (used by the theta == ref
  // identity checks); negative rates are rejected.
  if (lr < 0) throw std::invalid_argument("train config: lr must be >= 0");
  if (lr_final_frac < 0 || lr_final_frac > 1)
    throw std::invalid_argument("train config: lr_final_frac must be in [0, 1]");
  if (objective.beta <= 0) throw std::invalid_argument("train config: beta must be > 0");
  if (objective.beta_dpo <= 0) throw std::invalid_argument("train config: beta_dpo must be > 0");
  if (eval_every < 0) throw std::invalid_argument("train config: eval_every must be >= 0");
  if (eval_every > 0 && eval_n < 64)
    throw std::invalid_argument("train config: eval_n must be >= 64");
  if (grad_clip < 0) throw std::invalid_argument("train config: grad_clip must be >= 0");
}

io::Hash256 TrainConfig::fingerprint() const {
  io::ByteWriter w;
  w.u32(static_cast<uint32_t>(objective.kind));
  w.f64(objective.beta);
  w.f64(objective.beta_dpo);
  w.u8(objective.share_noise ? 1 : 0);
  w.u32(static_cast<uint32_t>(steps));
  w.u32(static_cast<uint32_t>(batch_size));
  w.f64(lr);
  w.f64(lr_final_frac);
  w.f64(adam.beta1);
  w.f64(adam.beta2);
  w.f64(adam.eps);
  w.f64(adam.weight_decay);
  w.u64(seed);
  w.u32(static_cast<uint32_t>(eval_every));
  w.u32(static_cast<uint32_t>(eval_n));
  w.f64(grad_clip);
  return io::sha256(w.data());
}

double lr_at_step(const TrainConfig& config, int step) {
  const double u = config.steps > 1
                       ? static_cast<double>(step - 1) / static_cast<double>(config.steps - 1)
                       : 0.0;
  const double f = config.lr_final_frac;
  return config.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(M_PI * u)));
}

std::string steplog_csv_header() {
  return "step,total,mse_w,mse_l,margin,phi_w,phi_l,grad_norm,lr,wall_time_s";
}

std::string steplog_csv_row(const StepLog& log, bool record_timing) {
  std::string r = std::to_string(log.step);
  for (double v : {log.mean.total, log.mean.mse_w, log.mean.mse_l, log.mean.margin,
                   log.mean.phi_w, log.mean.phi_l, log.grad_norm, log.lr,
                   record_timing ? log.wall_time_s : 0.0}) {
    r += ",";
    r += io::format_double(v);
  }
  return r;
}

diffusion::DenoiserParams Checkpoint::model() const {
  return diffusion::DenoiserParams::unflatten(spec, params);
}

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'O', 'C', 'K', '1', '\0'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(kMagic), 8));
  w.u32(kVersion);
  w.bytes(ckpt.config_fingerprint);
  w.u32(static_cast<uint32_t>(ckpt.spec.data_dim));
  w.u32(static_cast<uint32_t>(ckpt.spec.cond_dim));
  w.u32(static_cast<uint32_t>(ckpt.spec.time_dim));
  w.u32(static_cast<uint32_t>(ckpt.spec.schedule_T));
  w.u32(static_cast<uint32_t>(ckpt.spec.hidden.size()));
  for (int h : ckpt.spec.hidden) w.u32(static_cast<uint32_t>(h));
  w.i64(ckpt.step);
  w.f64_vector(ckpt.params);
  w.f64_vector(ckpt.adam.m);
  w.f64_vector(ckpt.adam.v);
  w.i64(ckpt.adam.step);
  for (uint64_t s : ckpt.rng_state) w.u64(s);
  w.u64(ckpt.perm.size());
  for (uint32_t p : ckpt.perm) w.u32(p);
  w.u32(ckpt.cursor);
  w.u64(ckpt.ref_checksum);
  const uint64_t crc = io::crc64(w.data());
  w.u64(crc);
  io::write_file(path, w.data());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto data = io::read_file(path);
  if (data.size() < 8 + 4 + 32 + 8)
    throw io::IntegrityError("checkpoint: file too short: " + path.string());
  const auto body = std::span<const uint8_t>(data).first(data.size() - 8);
  io::ByteReader tail(std::span<const uint8_t>(data).last(8));
  if (io::crc64(body) != tail.u64())
    throw io::IntegrityError("checkpoint: CRC-64 mismatch: " + path.string());
  io::ByteReader r(body);
  std::array<uint8_t, 8> magic{};
  r.bytes(magic);
  if (std::memcmp(magic.data(), kMagic, 8) != 0)
    throw io::IntegrityError("checkpoint: bad magic: " + path.string());
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kVersion)
    throw io::IntegrityError("checkpoint: unsupported version " + std::to_string(c.version));
  r.bytes(c.config_fingerprint);
  c.spec.data_dim = static_cast<int>(r.u32());
  c.spec.cond_dim = static_cast<int>(r.u32());
  c.spec.time_dim = static_cast<int>(r.u32());
  c.spec.schedule_T = static_cast<int>(r.u32());
  c.spec.hidden.resize(r.u32());
  for (auto& h : c.spec.hidden) h = static_cast<int>(r.u32());
  c.step = r.i64();
  c.params = r.f64_vector();
  c.adam.m = r.f64_vector();
  c.adam.v = r.f64_vector();
  c.adam.step = r.i64();
  for (auto& s : c.rng_state) s = r.u64();
  c.perm.resize(r.u64());
  for (auto& p : c.perm) p = r.u32();
  c.cursor = r.u32();
  c.ref_checksum = r.u64();
  if (r.remaining() != 0)
    throw io::IntegrityError("checkpoint: trailing bytes: " + path.string());
  return c;
}

namespace {

void shuffle(std::vector<uint32_t>& perm, Rng& rng) {
  for (size_t i = perm.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(perm[i - 1], perm[j]);
  }
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

TrainResult train(const TrainConfig& config, const tasks::Dataset& dataset,
                  const diffusion::DenoiserParams& init_params, const tasks::TaskSpec& task,
                  const diffusion::Schedule& schedule, const Checkpoint* resume,
                  int stop_at_step) {
  config.validate();
  task.validate();
  if (dataset.records.empty()) throw std::invalid_argument("train: dataset is empty");
  if (tasks::fingerprint(task) != dataset.header.task_fingerprint)
    throw std::invalid_argument("train: dataset/task fingerprint mismatch");
  if (static_cast<int>(dataset.header.dim) != init_params.spec.data_dim ||
      static_cast<int>(dataset.header.cond_dim) != init_params.spec.cond_dim)
    throw std::invalid_argument("train: dataset dims disagree with model spec");
  if (init_params.spec.schedule_T != schedule.T)
    throw std::invalid_argument("train: model schedule_T " +
                                std::to_string(init_params.spec.schedule_T) +
                                " != schedule T " + std::to_string(schedule.T));

  const auto cfg_print = config.fingerprint();
  const bool is_dpo = config.objective.kind == objectives::ObjectiveKind::dpo;
  std::optional<diffusion::ReferenceHandle> ref;
  if (is_dpo) ref.emplace(init_params);

  // Mutable run state.
  std::vector<double> flat = init_params.flatten();
  AdamState adam;
  Rng rng(config.seed);
  std::vector<uint32_t> perm(dataset.records.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<uint32_t>(i);
  uint32_t cursor = static_cast<uint32_t>(perm.size());  // forces shuffle on first use
  int start_step = 0;

  if (resume) {
    if (resume->config_fingerprint != cfg_print)
      throw std::invalid_argument("train: resume checkpoint config fingerprint mismatch");
    if (!(resume->spec == init_params.spec))
      throw std::invalid_argument("train: resume checkpoint model spec mismatch");
    if (is_dpo && resume->ref_checksum != ref->checksum())
      throw std::invalid_argument("train: resume checkpoint reference mismatch");
    flat = resume->params;
    adam = resume->adam;
    rng = Rng::from_state(resume->rng_state);
    perm = resume->perm;
    cursor = resume->cursor;
    start_step = static_cast<int>(resume->step);
  }

  auto snapshot = [&](int step) {
    Checkpoint c;
    c.config_fingerprint = cfg_print;
    c.spec = init_params.spec;
    c.step = step;
    c.params = flat;
    c.adam = adam;
    c.rng_state = rng.state();
    c.perm = perm;
    c.cursor = cursor;
    c.ref_checksum = is_dpo ? ref->checksum() : 0;
    return c;
  };

  TrainResult result;
  Checkpoint last_good = snapshot(start_step);

  const int last_step =
      stop_at_step > 0 ? std::min(stop_at_step, config.steps) : config.steps;
  for (int step = start_step + 1; step <= last_step; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    last_good = snapshot(step - 1);

    // Minibatch indices, reshuffling at epoch boundaries.
    std::vector<uint32_t> batch(static_cast<size_t>(config.batch_size));
    for (auto& idx : batch) {
      if (cursor >= perm.size()) {
        shuffle(perm, rng);
        cursor = 0;
      }
      idx = perm[cursor++];
    }

    const double lr_t = lr_at_step(config, step);
    const auto model = diffusion::DenoiserParams::unflatten(init_params.spec, flat);

    objectives::PairLossBreakdown mean{};
    double total_value = 0;
    std::vector<double> grads;
    bool step_failed = false;
    try {
      nd::Tape tape;
      const auto watched = model.watched(tape);
      nd::Tensor acc;
      for (size_t i = 0; i < batch.size(); ++i) {
        const auto& triple = dataset.records[batch[i]];
        const auto draw = objectives::draw_pair(schedule, init_params.spec.data_dim,
                                                config.objective.share_noise, rng);
        objectives::PairLoss pl;
        switch (config.objective.kind) {
          case objectives::ObjectiveKind::mapo:
            pl = objectives::mapo_loss_at(watched, schedule, triple, config.objective, draw);
            break;
          case objectives::ObjectiveKind::dpo:
            pl = objectives::dpo_loss_at(watched, *ref, schedule, triple, config.objective,
                                         draw);
            break;
          case objectives::ObjectiveKind::sft:
            pl = objectives::sft_loss_at(watched, schedule, triple, config.objective, draw);
            break;
        }
        mean.total += pl.detail.total;
        mean.mse_w += pl.detail.mse_w;
        mean.mse_l += pl.detail.mse_l;
        mean.margin += pl.detail.margin;
        mean.phi_w += pl.detail.phi_w;
        mean.phi_l += pl.detail.phi_l;
        acc = i == 0 ? pl.loss : nd::concat(acc, pl.loss);
      }
      const nd::Tensor loss = nd::mean(acc);
      total_value = loss.item();
      const auto gm = tape.backward(loss);
      grads.reserve(flat.size());
      for (int id : watched.leaf_nodes()) {
        const auto& g = gm.at(id).values;
        grads.insert(grads.end(), g.begin(), g.end());
      }
    } catch (const std::domain_error&) {
      // Divergence can surface as a domain error inside the loss graph
      // (log/exp guards) before any NaN reaches the loss value.
      step_failed = true;
    } catch (const std::runtime_error&) {
      step_failed = true;
    }
    const double bsz = static_cast<double>(config.batch_size);
    mean.total /= bsz;
    mean.mse_w /= bsz;
    mean.mse_l /= bsz;
    mean.margin /= bsz;
    mean.phi_w /= bsz;
    mean.phi_l /= bsz;

    double grad_norm = 0;
    for (double g : grads) grad_norm += g * g;
    grad_norm = std::sqrt(grad_norm);

    if (step_failed || !std::isfinite(total_value) || !std::isfinite(grad_norm) ||
        !all_finite(grads)) {
      result.status = TrainStatus::aborted_non_finite;
      result.aborted_step = step;
      result.checkpoint = last_good;
      if (!config.checkpoint_path.empty()) save_checkpoint(last_good, config.checkpoint_path);
      return result;
    }

    if (config.grad_clip > 0 && grad_norm > config.grad_clip) {
      const double scale = config.grad_clip / grad_norm;
      for (auto& g : grads) g *= scale;
    }

    adam_step(flat, grads, adam, config.adam, lr_t);

    StepLog log;
    log.step = step;
    log.mean = mean;
    log.grad_norm = grad_norm;
    log.lr = lr_t;
    log.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.logs.push_back(log);

    if (config.eval_every > 0 && step % config.eval_every == 0) {
      const auto current = diffusion::DenoiserParams::unflatten(init_params.spec, flat);
      const uint64_t eval_seed =
          Rng(config.seed ^ 0xe7a1'5eed'0000'0000ull).split(static_cast<uint64_t>(step)).next_u64();
      result.reports.push_back(
          metrics::evaluate(current, schedule, task, config.eval_n, eval_seed));
    }
  }

  result.checkpoint = snapshot(last_step);
  if (!config.checkpoint_path.empty()) save_checkpoint(result.checkpoint, config.checkpoint_path);
  return result;
}

}  // namespace mapo::train
