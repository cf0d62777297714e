#include "mapo/cli/config.hpp"

#include <algorithm>

#include "mapo/io.hpp"
#include "mapo/objectives.hpp"

namespace mapo::cli {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path, what);
}

class Cursor {
 public:
  Cursor(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const json& raw() const { return j_; }

  void expect_object() const {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  // Every consumed key is recorded; unknown keys are rejected afterwards.
  std::optional<Cursor> child(const std::string& key) const {
    expect_object();
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Cursor(*it, path_.empty() ? key : path_ + "." + key);
  }

  void reject_unknown() const {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        fail(path_.empty() ? it.key() : path_ + "." + it.key(), "unknown field");
    }
  }

  double number(double lo, double hi) const {
    if (!j_.is_number()) fail(path_, "expected a number");
    const double v = j_.get<double>();
    if (v < lo || v > hi)
      fail(path_, "value " + io::format_double(v) + " outside [" + io::format_double(lo) +
                      ", " + io::format_double(hi) + "]");
    return v;
  }

  int integer(int lo, int hi) const {
    if (!j_.is_number_integer()) fail(path_, "expected an integer");
    const int64_t v = j_.get<int64_t>();
    if (v < lo || v > hi)
      fail(path_, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
    return static_cast<int>(v);
  }

  uint64_t u64() const {
    if (!j_.is_number_unsigned() && !j_.is_number_integer()) fail(path_, "expected an integer");
    const int64_t v = j_.get<int64_t>();
    if (v < 0) fail(path_, "expected a non-negative integer");
    return static_cast<uint64_t>(v);
  }

  bool boolean() const {
    if (!j_.is_boolean()) fail(path_, "expected a boolean");
    return j_.get<bool>();
  }

  std::string string() const {
    if (!j_.is_string()) fail(path_, "expected a string");
    return j_.get<std::string>();
  }

  std::string one_of(const std::vector<std::string>& allowed) const {
    const std::string s = string();
    if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string msg = "expected one of {";
      for (size_t i = 0; i < allowed.size(); ++i)
        msg += (i ? ", " : "") + allowed[i];
      fail(path_, msg + "}, got \"" + s + "\"");
    }
    return s;
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  mutable std::vector<std::string> seen_;
};

template <typename T, typename F>
std::vector<T> array_of(const Cursor& c, F element) {
  if (!c.raw().is_array()) fail(c.path(), "expected an array");
  std::vector<T> out;
  size_t i = 0;
  for (const auto& e : c.raw()) {
    out.push_back(element(Cursor(e, c.path() + "[" + std::to_string(i) + "]")));
    ++i;
  }
  return out;
}

}  // namespace

tasks::TaskSpec TaskConfig::make() const {
  if (mismatch_level.has_value()) return tasks::make_task(*mismatch_level);
  return tasks::make_preset(preset);
}

LabConfig LabConfig::from_json(const json& j) {
  LabConfig cfg;
  Cursor root(j, "");
  root.expect_object();

  if (auto task = root.child("task")) {
    if (auto p = task->child("preset")) cfg.task.preset = p->one_of(tasks::preset_names());
    if (auto m = task->child("mismatch_level"))
      cfg.task.mismatch_level = m->number(0.0, 64.0);
    task->reject_unknown();
  }
  if (auto model = root.child("model")) {
    if (auto h = model->child("hidden")) {
      cfg.model.hidden =
          array_of<int>(*h, [](const Cursor& c) { return c.integer(1, 4096); });
      if (cfg.model.hidden.empty()) fail(h->path(), "at least one hidden layer required");
    }
    if (auto t = model->child("time_dim")) {
      cfg.model.time_dim = t->integer(2, 64);
      if (cfg.model.time_dim % 2 != 0) fail(t->path(), "time_dim must be even");
    }
    model->reject_unknown();
  }
  if (auto sched = root.child("schedule")) {
    if (auto k = sched->child("kind"))
      cfg.schedule.kind = diffusion::schedule_kind_from_string(k->one_of({"cosine", "linear"}));
    if (auto t = sched->child("T")) cfg.schedule.T = t->integer(2, 4096);
    sched->reject_unknown();
  }
  if (auto obj = root.child("objective")) {
    if (auto k = obj->child("kind"))
      cfg.train.objective.kind = objectives::objective_from_string(k->one_of({"mapo", "dpo", "sft"}));
    if (auto b = obj->child("beta")) {
      cfg.train.objective.beta = b->number(1e-6, 1e9);
      if (cfg.train.objective.beta <= 0) fail(b->path(), "beta must be > 0");
    }
    if (auto b = obj->child("beta_dpo")) cfg.train.objective.beta_dpo = b->number(1e-6, 1e9);
    if (auto s = obj->child("share_noise")) cfg.train.objective.share_noise = s->boolean();
    obj->reject_unknown();
  }
  if (auto tr = root.child("train")) {
    if (auto s = tr->child("steps")) cfg.train.steps = s->integer(1, 100000000);
    if (auto b = tr->child("batch_size")) cfg.train.batch_size = b->integer(1, 1000000);
    if (auto l = tr->child("lr")) cfg.train.lr = l->number(0.0, 1e6);
    if (auto f = tr->child("lr_final_frac")) cfg.train.lr_final_frac = f->number(0.0, 1.0);
    if (auto a = tr->child("adam")) {
      if (auto b1 = a->child("beta1")) cfg.train.adam.beta1 = b1->number(0.0, 0.999999);
      if (auto b2 = a->child("beta2")) cfg.train.adam.beta2 = b2->number(0.0, 0.9999999);
      if (auto e = a->child("eps")) cfg.train.adam.eps = e->number(1e-16, 1.0);
      if (auto w = a->child("weight_decay")) cfg.train.adam.weight_decay = w->number(0.0, 1.0);
      a->reject_unknown();
    }
    if (auto s = tr->child("seed")) cfg.train.seed = s->u64();
    if (auto e = tr->child("eval_every")) cfg.train.eval_every = e->integer(0, 100000000);
    if (auto n = tr->child("eval_n")) cfg.train.eval_n = n->integer(64, 100000000);
    if (auto g = tr->child("grad_clip")) cfg.train.grad_clip = g->number(0.0, 1e9);
    tr->reject_unknown();
  }
  if (auto d = root.child("data")) {
    if (auto n = d->child("count")) cfg.data.count = n->integer(1, 100000000);
    if (auto s = d->child("seed")) cfg.data.seed = s->u64();
    if (auto r = d->child("rejected_from"))
      cfg.data.rejected_from = r->one_of({"model", "mixture"});
    if (auto f = d->child("filter_invalid")) cfg.data.filter_invalid = f->boolean();
    if (auto e = d->child("json_export")) cfg.data.json_export = e->boolean();
    d->reject_unknown();
  }
  if (auto p = root.child("pretrain")) {
    if (auto s = p->child("steps")) cfg.pretrain.steps = s->integer(1, 100000000);
    if (auto b = p->child("batch_size")) cfg.pretrain.batch_size = b->integer(1, 1000000);
    if (auto l = p->child("lr")) cfg.pretrain.lr = l->number(0.0, 1e6);
    if (auto f = p->child("lr_final_frac")) cfg.pretrain.lr_final_frac = f->number(0.0, 1.0);
    if (auto s = p->child("seed")) cfg.pretrain.seed = s->u64();
    if (auto n = p->child("count")) cfg.pretrain.count = n->integer(1, 100000000);
    p->reject_unknown();
  }
  if (auto e = root.child("eval")) {
    if (auto n = e->child("n")) cfg.eval.n = n->integer(64, 100000000);
    if (auto s = e->child("seed")) cfg.eval.seed = s->u64();
    e->reject_unknown();
  }
  if (auto sw = root.child("sweep")) {
    if (auto o = sw->child("objective"))
      cfg.sweep.objective = array_of<std::string>(
          *o, [](const Cursor& c) { return c.one_of({"mapo", "dpo", "sft"}); });
    if (auto b = sw->child("beta"))
      cfg.sweep.beta = array_of<double>(*b, [](const Cursor& c) { return c.number(1e-6, 1e9); });
    if (auto m = sw->child("mismatch_level"))
      cfg.sweep.mismatch_level =
          array_of<double>(*m, [](const Cursor& c) { return c.number(0.0, 64.0); });
    if (auto d = sw->child("dataset_size"))
      cfg.sweep.dataset_size =
          array_of<int>(*d, [](const Cursor& c) { return c.integer(1, 100000000); });
    if (auto s = sw->child("seed"))
      cfg.sweep.seed = array_of<uint64_t>(*s, [](const Cursor& c) { return c.u64(); });
    if (auto jobs = sw->child("jobs")) cfg.sweep.jobs = jobs->integer(1, 256);
    sw->reject_unknown();
  }
  if (auto o = root.child("out_dir")) cfg.out_dir = o->string();
  if (auto r = root.child("record_timing")) cfg.record_timing = r->boolean();
  root.reject_unknown();

  cfg.train.record_timing = cfg.record_timing;
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    fail("train", e.what());
  }
  return cfg;
}

LabConfig LabConfig::load(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const io::IntegrityError& e) {
    throw ConfigError("(file)", e.what());
  } catch (const json::parse_error& e) {
    throw ConfigError("(file)", std::string("invalid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return from_json(j);
}

json LabConfig::to_json() const {
  json j;
  j["task"]["preset"] = task.preset;
  if (task.mismatch_level.has_value()) j["task"]["mismatch_level"] = *task.mismatch_level;
  j["model"]["hidden"] = model.hidden;
  j["model"]["time_dim"] = model.time_dim;
  j["schedule"]["kind"] = diffusion::to_string(schedule.kind);
  j["schedule"]["T"] = schedule.T;
  j["objective"]["kind"] = objectives::to_string(train.objective.kind);
  j["objective"]["beta"] = train.objective.beta;
  j["objective"]["beta_dpo"] = train.objective.beta_dpo;
  j["objective"]["share_noise"] = train.objective.share_noise;
  j["train"]["steps"] = train.steps;
  j["train"]["batch_size"] = train.batch_size;
  j["train"]["lr"] = train.lr;
  j["train"]["lr_final_frac"] = train.lr_final_frac;
  j["train"]["adam"]["beta1"] = train.adam.beta1;
  j["train"]["adam"]["beta2"] = train.adam.beta2;
  j["train"]["adam"]["eps"] = train.adam.eps;
  j["train"]["adam"]["weight_decay"] = train.adam.weight_decay;
  j["train"]["seed"] = train.seed;
  j["train"]["eval_every"] = train.eval_every;
  j["train"]["eval_n"] = train.eval_n;
  j["train"]["grad_clip"] = train.grad_clip;
  j["data"]["count"] = data.count;
  j["data"]["seed"] = data.seed;
  j["data"]["rejected_from"] = data.rejected_from;
  j["data"]["filter_invalid"] = data.filter_invalid;
  j["data"]["json_export"] = data.json_export;
  j["pretrain"]["steps"] = pretrain.steps;
  j["pretrain"]["batch_size"] = pretrain.batch_size;
  j["pretrain"]["lr"] = pretrain.lr;
  j["pretrain"]["lr_final_frac"] = pretrain.lr_final_frac;
  j["pretrain"]["seed"] = pretrain.seed;
  j["pretrain"]["count"] = pretrain.count;
  j["eval"]["n"] = eval.n;
  j["eval"]["seed"] = eval.seed;
  if (!sweep.empty() || sweep.jobs != 1) {
    if (!sweep.objective.empty()) j["sweep"]["objective"] = sweep.objective;
    if (!sweep.beta.empty()) j["sweep"]["beta"] = sweep.beta;
    if (!sweep.mismatch_level.empty()) j["sweep"]["mismatch_level"] = sweep.mismatch_level;
    if (!sweep.dataset_size.empty()) j["sweep"]["dataset_size"] = sweep.dataset_size;
    if (!sweep.seed.empty()) j["sweep"]["seed"] = sweep.seed;
    j["sweep"]["jobs"] = sweep.jobs;
  }
  j["out_dir"] = out_dir.string();
  j["record_timing"] = record_timing;
  return j;
}

diffusion::MlpSpec LabConfig::model_spec(const tasks::TaskSpec& t) const {
  diffusion::MlpSpec spec;
  spec.data_dim = t.dim;
  spec.cond_dim = t.cond_dim;
  spec.time_dim = model.time_dim;
  spec.schedule_T = schedule.T;
  spec.hidden = model.hidden;
  return spec;
}

void apply_override(json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("(override)", "expected key.path=value, got \"" + assignment + "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // bare strings like mapo/cosine
  }

  json* node = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path segment in override");
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace mapo::cli
