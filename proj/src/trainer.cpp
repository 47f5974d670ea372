#include "stemgan/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "stemgan/error.hpp"

namespace stemgan {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace fs = std::filesystem;

// ------------------------------------------------------------ key / value

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string count_str(std::size_t v) { return std::to_string(v); }

double parse_real(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError("'" + key + "': expected a real number, got '" + s + "'");
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError("'" + key + "': expected a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ParseError("'" + key + "': integer out of range '" + s + "'");
  }
}

// Applies every key under `prefix` through `apply`, rejecting unknown ones.
template <typename Apply>
void apply_section(const KeyValues& kv, const std::string& prefix, Apply apply) {
  for (const auto& [key, value] : kv) {
    if (key.rfind(prefix, 0) != 0) continue;
    if (!apply(key.substr(prefix.size()), value)) throw ParseError("unknown key '" + key + "'");
  }
}

}  // namespace

void put(KeyValues& kv, const ModelConfig& m) {
  const GeneratorConfig& g = m.generator;
  kv["model.width_scale"] = format_real(g.width_scale);
  kv["model.base_width"] = count_str(g.base_width);
  kv["model.encoder_stages"] = count_str(g.encoder_stages);
  kv["model.decoder_stages"] = count_str(g.decoder_stages);
  kv["model.blocks_per_stage"] = count_str(g.blocks_per_stage);
  kv["model.shift_fraction"] = g.shift_fraction.str();
  kv["model.attention_reduction"] = count_str(g.attention_reduction);
  kv["model.input_frames"] = count_str(g.input_frames);
  kv["model.frame_size"] = count_str(m.frame_size);
  kv["model.disc_width_scale"] = format_real(m.discriminator.width_scale);
  kv["model.disc_base_width"] = count_str(m.discriminator.base_width);
  kv["model.disc_stages"] = count_str(m.discriminator.stages);
}

void put(KeyValues& kv, const TrainConfig& t) {
  kv["train.learning_rate"] = format_real(t.learning_rate);
  kv["train.beta1"] = format_real(t.beta1);
  kv["train.beta2"] = format_real(t.beta2);
  kv["train.adam_epsilon"] = format_real(t.adam_epsilon);
  kv["train.d_steps_per_g"] = count_str(t.d_steps_per_g);
  kv["train.max_epochs"] = count_str(t.max_epochs);
  kv["train.mse_stop"] = format_real(t.mse_stop);
  kv["train.d_score_target"] = format_real(t.d_score_target);
  kv["train.d_score_tolerance"] = format_real(t.d_score_tolerance);
  kv["train.d_score_window"] = count_str(t.d_score_window);
  kv["train.batch_size"] = count_str(t.batch_size);
  kv["train.seed"] = std::to_string(t.seed);
}

void put(KeyValues& kv, const LossWeights& w) {
  kv["loss.lambda_int"] = format_real(w.lambda_int);
  kv["loss.lambda_gra"] = format_real(w.lambda_gra);
  kv["loss.lambda_adv"] = format_real(w.lambda_adv);
}

ModelConfig model_config_from(const KeyValues& kv) {
  ModelConfig m;
  GeneratorConfig& g = m.generator;
  apply_section(kv, "model.", [&](const std::string& k, const std::string& v) {
    const std::string full = "model." + k;
    if (k == "width_scale") g.width_scale = parse_real(full, v);
    else if (k == "base_width") g.base_width = parse_uint(full, v);
    else if (k == "encoder_stages") g.encoder_stages = parse_uint(full, v);
    else if (k == "decoder_stages") g.decoder_stages = parse_uint(full, v);
    else if (k == "blocks_per_stage") g.blocks_per_stage = parse_uint(full, v);
    else if (k == "shift_fraction") g.shift_fraction = nn::Rational::parse(v);
    else if (k == "attention_reduction") g.attention_reduction = parse_uint(full, v);
    else if (k == "input_frames") g.input_frames = parse_uint(full, v);
    else if (k == "frame_size") m.frame_size = parse_uint(full, v);
    else if (k == "disc_width_scale") m.discriminator.width_scale = parse_real(full, v);
    else if (k == "disc_base_width") m.discriminator.base_width = parse_uint(full, v);
    else if (k == "disc_stages") m.discriminator.stages = parse_uint(full, v);
    else return false;
    return true;
  });
  return m;
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig t;
  apply_section(kv, "train.", [&](const std::string& k, const std::string& v) {
    const std::string full = "train." + k;
    if (k == "learning_rate") t.learning_rate = parse_real(full, v);
    else if (k == "beta1") t.beta1 = parse_real(full, v);
    else if (k == "beta2") t.beta2 = parse_real(full, v);
    else if (k == "adam_epsilon") t.adam_epsilon = parse_real(full, v);
    else if (k == "d_steps_per_g") t.d_steps_per_g = parse_uint(full, v);
    else if (k == "max_epochs") t.max_epochs = parse_uint(full, v);
    else if (k == "mse_stop") t.mse_stop = parse_real(full, v);
    else if (k == "d_score_target") t.d_score_target = parse_real(full, v);
    else if (k == "d_score_tolerance") t.d_score_tolerance = parse_real(full, v);
    else if (k == "d_score_window") t.d_score_window = parse_uint(full, v);
    else if (k == "batch_size") t.batch_size = parse_uint(full, v);
    else if (k == "seed") t.seed = parse_uint(full, v);
    else return false;
    return true;
  });
  return t;
}

LossWeights loss_weights_from(const KeyValues& kv) {
  LossWeights w;
  apply_section(kv, "loss.", [&](const std::string& k, const std::string& v) {
    const std::string full = "loss." + k;
    if (k == "lambda_int") w.lambda_int = parse_real(full, v);
    else if (k == "lambda_gra") w.lambda_gra = parse_real(full, v);
    else if (k == "lambda_adv") w.lambda_adv = parse_real(full, v);
    else return false;
    return true;
  });
  return w;
}

std::string to_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("line " + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::uint64_t config_hash(const KeyValues& kv) {
  const std::string text = to_text(kv);
  return fnv1a(text.data(), text.size());
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("train.learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < beta2 && beta2 < 1.0)) {
    throw ValidationError("train betas must satisfy 0 <= beta1 < beta2 < 1");
  }
  if (!(adam_epsilon > 0.0)) throw ValidationError("train.adam_epsilon must be positive");
  if (d_steps_per_g < 1) throw ValidationError("train.d_steps_per_g must be at least 1");
  if (batch_size < 1) throw ValidationError("train.batch_size must be at least 1");
  if (d_score_window < 1) throw ValidationError("train.d_score_window must be at least 1");
  if (!(d_score_tolerance >= 0.0)) throw ValidationError("train.d_score_tolerance must be non-negative");
  if (!(mse_stop >= 0.0)) throw ValidationError("train.mse_stop must be non-negative");
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::Converged: return "converged";
    case StopReason::Callback: return "callback";
  }
  return "?";
}

// ------------------------------------------------------------------ Adam

Adam::Adam(std::vector<std::pair<std::string, nn::Parameter*>> params, double lr, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  reset();
}

void Adam::reset() {
  m_.clear();
  v_.clear();
  for (auto& [name, p] : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
  t_ = 0;
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nn::Parameter& p = *params_[i].second;
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* w = p.value.data();
    const double* g = p.grad.data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

void Adam::visit(nn::StateVisitor& v) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    v.buffer("adam.m." + params_[i].first, m_[i]);
    v.buffer("adam.v." + params_[i].first, v_[i]);
  }
}

// ------------------------------------------------------------ blobs

namespace {

constexpr char kMagic[8] = {'S', 'T', 'E', 'M', 'G', 'A', 'N', 'W'};
constexpr std::uint32_t kBlobVersion = 1;

struct Entry {
  std::uint8_t kind;  // 0 parameter, 1 buffer
  Tensor tensor;
};

class BlobWriter : public nn::StateVisitor {
 public:
  void parameter(const std::string& name, nn::Parameter& p) override { add(0, name, p.value); }
  void buffer(const std::string& name, Tensor& t) override { add(1, name, t); }

  std::string finish() const {
    std::string out(kMagic, sizeof kMagic);
    append(out, kBlobVersion);
    append(out, static_cast<std::uint64_t>(count_));
    return out + body_;
  }

 private:
  template <typename T>
  static void append(std::string& s, T v) {
    s.append(reinterpret_cast<const char*>(&v), sizeof v);
  }

  void add(std::uint8_t kind, const std::string& name, const Tensor& t) {
    append(body_, kind);
    append(body_, static_cast<std::uint32_t>(name.size()));
    body_ += name;
    append(body_, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) append(body_, static_cast<std::uint64_t>(d));
    body_.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
    ++count_;
  }

  std::string body_;
  std::size_t count_ = 0;
};

std::map<std::string, Entry> parse_blob(const std::string& data, const std::string& what) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > data.size()) throw ParseError(what + ": truncated checkpoint blob");
    std::memcpy(dst, data.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(what + ": not a checkpoint blob");
  std::uint32_t version;
  take(&version, sizeof version);
  if (version != kBlobVersion) throw ParseError(what + ": unsupported blob version " + std::to_string(version));
  std::uint64_t count;
  take(&count, sizeof count);
  std::map<std::string, Entry> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint8_t kind;
    std::uint32_t len, rank;
    take(&kind, 1);
    take(&len, sizeof len);
    if (len > data.size()) throw ParseError(what + ": corrupt entry name");
    std::string name(len, '\0');
    take(name.data(), len);
    take(&rank, sizeof rank);
    if (rank > 8) throw ParseError(what + ": corrupt tensor rank");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v;
      take(&v, sizeof v);
      d = v;
    }
    const std::size_t n = shape_size(shape);
    if (n > (data.size() - pos) / sizeof(double)) throw ParseError(what + ": truncated tensor '" + name + "'");
    Tensor t(shape);
    take(t.data(), n * sizeof(double));
    out.emplace(name, Entry{kind, std::move(t)});
  }
  if (pos != data.size()) throw ParseError(what + ": trailing bytes");
  return out;
}

class BlobReader : public nn::StateVisitor {
 public:
  BlobReader(std::map<std::string, Entry> entries, std::string what)
      : entries_(std::move(entries)), what_(std::move(what)) {}
  void parameter(const std::string& name, nn::Parameter& p) override { load(name, p.value); }
  void buffer(const std::string& name, Tensor& t) override { load(name, t); }
  void finish() const {
    if (used_ != entries_.size()) throw ValidationError(what_ + ": checkpoint has entries this model does not use");
  }

 private:
  void load(const std::string& name, Tensor& t) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError(what_ + ": missing tensor '" + name + "'");
    if (it->second.tensor.shape() != t.shape()) {
      throw ValidationError(what_ + ": tensor '" + name + "' has shape " + shape_string(it->second.tensor.shape()) +
                            ", model expects " + shape_string(t.shape()));
    }
    std::memcpy(t.data(), it->second.tensor.data(), t.size() * sizeof(double));
    ++used_;
  }
  std::map<std::string, Entry> entries_;
  std::string what_;
  std::size_t used_ = 0;
};

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& data) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!os) throw IoError("short write to '" + p.string() + "'");
}

template <typename Net>
std::vector<std::pair<std::string, nn::Parameter*>> named_parameters(Net& net) {
  struct Collect : nn::StateVisitor {
    std::vector<std::pair<std::string, nn::Parameter*>> out;
    void parameter(const std::string& name, nn::Parameter& p) override { out.emplace_back(name, &p); }
    void buffer(const std::string&, Tensor&) override {}
  } c;
  net.visit("", c);
  return c.out;
}

// Optimiser step count travels as a one-element tensor.
struct StepVisitor {
  static void visit(Adam& opt, nn::StateVisitor& v, bool loading) {
    Tensor steps({1}, static_cast<double>(opt.steps()));
    v.buffer("adam.steps", steps);
    if (loading) opt.set_steps(static_cast<std::size_t>(steps[0]));
  }
};

template <typename Net>
std::string serialize(Net& net, Adam* opt) {
  BlobWriter w;
  net.visit("", w);
  if (opt) {
    opt->visit(w);
    StepVisitor::visit(*opt, w, false);
  }
  return w.finish();
}

template <typename Net>
void deserialize(Net& net, Adam* opt, const std::string& data, const std::string& what, bool network_only = false) {
  auto entries = parse_blob(data, what);
  if (network_only) {
    std::erase_if(entries, [](const auto& e) { return e.first.rfind("adam.", 0) == 0; });
  }
  BlobReader r(std::move(entries), what);
  net.visit("", r);
  if (opt) {
    opt->visit(r);
    StepVisitor::visit(*opt, r, true);
  }
  r.finish();
}

void require_finite_grads(const std::vector<std::pair<std::string, nn::Parameter*>>& params, const char* net,
                          double loss) {
  for (const auto& [name, p] : params) {
    if (!p->grad.all_finite()) {
      throw NumericalError(std::string("non-finite gradient in ") + net + " parameter '" + name +
                           "' (loss " + format_real(loss) + "); step aborted");
    }
  }
  if (!std::isfinite(loss)) throw NumericalError(std::string("non-finite ") + net + " loss; step aborted");
}

// Copies of a network's running statistics, so an aborted step can undo the
// updates its training-mode forward pass already made.
class BufferStash {
 public:
  template <class Net>
  explicit BufferStash(Net& net) {
    Collect c{saved_};
    net.visit("", c);
  }
  template <class Net>
  void restore(Net& net) {
    Restore r{saved_};
    net.visit("", r);
  }

 private:
  struct Collect : nn::StateVisitor {
    std::vector<Tensor>& out;
    explicit Collect(std::vector<Tensor>& o) : out(o) {}
    void parameter(const std::string&, nn::Parameter&) override {}
    void buffer(const std::string&, Tensor& t) override { out.push_back(t); }
  };
  struct Restore : nn::StateVisitor {
    std::vector<Tensor>& in;
    std::size_t next = 0;
    explicit Restore(std::vector<Tensor>& i) : in(i) {}
    void parameter(const std::string&, nn::Parameter&) override {}
    void buffer(const std::string&, Tensor& t) override { t = in.at(next++); }
  };
  std::vector<Tensor> saved_;
};

}  // namespace

// ------------------------------------------------------------ Trainer

struct Trainer::State {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  std::unique_ptr<Generator> g;
  std::unique_ptr<Discriminator> d;
  std::vector<std::pair<std::string, nn::Parameter*>> g_params, d_params;
  std::unique_ptr<Adam> opt_g, opt_d;
  std::size_t epoch = 0;
  std::map<std::string, double> metrics;
  // per generator step
  double last_mse = 0.0;
  double last_fake_score = 0.0;

  State(ModelConfig m, TrainConfig t, LossWeights w) : model(std::move(m)), train(t), loss(w) {
    model.validate();
    train.validate();
    loss.validate();
    g = std::make_unique<Generator>(model.generator, train.seed);
    d = std::make_unique<Discriminator>(model.discriminator, train.seed ^ 0x5bd1e995u);
    g_params = named_parameters(*g);
    d_params = named_parameters(*d);
    opt_g = std::make_unique<Adam>(g_params, train.learning_rate, train.beta1, train.beta2, train.adam_epsilon);
    opt_d = std::make_unique<Adam>(d_params, train.learning_rate, train.beta1, train.beta2, train.adam_epsilon);
  }

  Tensor generate_frozen(const Tensor& inputs) {
    g->set_mode(nn::Mode::Frozen);
    return g->forward(inputs);
  }

  double d_step(const Tensor& real, const Tensor& fake) {
    const std::uint64_t g_before = state_hash(*g);
    d->set_mode(nn::Mode::Train);
    d->zero_grad();
    LossResult lr = bce_with_grad(d->forward(real), 1.0);
    d->backward(lr.grad);
    LossResult lf = bce_with_grad(d->forward(fake), 0.0);
    d->backward(lf.grad);
    const double loss_value = lr.value + lf.value;
    require_finite_grads(d_params, "discriminator", loss_value);
    opt_d->step();
    if (state_hash(*g) != g_before) throw std::logic_error("generator weights changed during a critic step");
    return loss_value;
  }

  // Training-mode generator pass; its activations stay cached for g_finish.
  Tensor g_forward(const Tensor& inputs) {
    g->set_mode(nn::Mode::Train);
    return g->forward(inputs);
  }

  // Generator update for a prediction produced by the latest g_forward.
  double g_finish(const Tensor& pred, const Tensor& targets) {
    const std::uint64_t d_before = state_hash(*d);
    d->set_mode(nn::Mode::Frozen);
    g->zero_grad();
    d->zero_grad();
    const Tensor grid = d->forward(pred);
    GeneratorObjective obj = generator_objective(pred, targets, grid, loss);
    Tensor grad = d->backward(obj.grad_grid);
    grad += obj.grad_pred;
    g->backward(grad);
    require_finite_grads(g_params, "generator", obj.total);
    opt_g->step();
    if (state_hash(*d) != d_before) throw std::logic_error("critic weights changed during a generator step");
    last_mse = obj.intensity;
    last_fake_score = grid.mean();
    return obj.total;
  }

  KeyValues meta() const {
    KeyValues kv;
    put(kv, model);
    put(kv, train);
    put(kv, loss);
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(kv)));
    kv["state.config_hash"] = hash;
    kv["state.epoch"] = std::to_string(epoch);
    for (const auto& [k, v] : metrics) kv["metrics." + k] = format_real(v);
    return kv;
  }

  struct Snapshot {
    std::string g, d, meta;
  };

  Snapshot snapshot() const {
    return {serialize(*g, opt_g.get()), serialize(*d, opt_d.get()), to_text(meta())};
  }

  void restore(const Snapshot& s) {
    deserialize(*g, opt_g.get(), s.g, "generator");
    deserialize(*d, opt_d.get(), s.d, "discriminator");
  }

  static void write(const Snapshot& s, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());
    write_file(dir / "generator.bin", s.g);
    write_file(dir / "discriminator.bin", s.d);
    write_file(dir / "meta.txt", s.meta);
  }
};

Trainer::Trainer(ModelConfig model, TrainConfig train, LossWeights loss)
    : s_(std::make_unique<State>(std::move(model), train, loss)) {}
Trainer::Trainer(std::unique_ptr<State> s) : s_(std::move(s)) {}
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;
Trainer::~Trainer() = default;

Generator& Trainer::generator() { return *s_->g; }
Discriminator& Trainer::discriminator() { return *s_->d; }
const ModelConfig& Trainer::model_config() const { return s_->model; }
const TrainConfig& Trainer::train_config() const { return s_->train; }
const LossWeights& Trainer::loss_weights() const { return s_->loss; }
std::size_t Trainer::epoch() const { return s_->epoch; }
double Trainer::learning_rate() const { return s_->opt_g->learning_rate(); }
const std::map<std::string, double>& Trainer::metrics() const { return s_->metrics; }

std::pair<Tensor, Tensor> batch_tensors(const std::vector<FrameWindow>& batch) {
  if (batch.empty()) throw ArgumentError("empty training batch");
  const std::size_t t = batch.front().inputs.size();
  if (t == 0 || !batch.front().target) throw ArgumentError("training window without frames");
  const Shape fs = batch.front().target->tensor().shape();
  const std::size_t chunk = shape_size(fs);
  Tensor inputs({batch.size(), t, fs[0], fs[1], fs[2]});
  Tensor targets({batch.size(), fs[0], fs[1], fs[2]});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const FrameWindow& w = batch[n];
    if (w.inputs.size() != t) throw ArgumentError("windows in a batch differ in length");
    for (std::size_t k = 0; k < t; ++k) {
      if (w.inputs[k]->tensor().shape() != fs) throw ArgumentError("frames in a batch differ in size");
      std::memcpy(inputs.data() + (n * t + k) * chunk, w.inputs[k]->tensor().data(), chunk * sizeof(double));
    }
    if (w.target->tensor().shape() != fs) throw ArgumentError("frames in a batch differ in size");
    std::memcpy(targets.data() + n * chunk, w.target->tensor().data(), chunk * sizeof(double));
  }
  return {std::move(inputs), std::move(targets)};
}

double Trainer::train_step_discriminator(const std::vector<FrameWindow>& batch) {
  auto [inputs, targets] = batch_tensors(batch);
  const std::uint64_t g_before = state_hash(*s_->g);
  const Tensor fake = s_->generate_frozen(inputs);
  if (state_hash(*s_->g) != g_before) throw std::logic_error("frozen generator forward changed its state");
  BufferStash stash(*s_->d);
  try {
    return s_->d_step(targets, fake);
  } catch (const NumericalError&) {
    stash.restore(*s_->d);
    throw;
  }
}

double Trainer::train_step_generator(const std::vector<FrameWindow>& batch) {
  auto [inputs, targets] = batch_tensors(batch);
  BufferStash stash(*s_->g);
  try {
    const Tensor pred = s_->g_forward(inputs);
    return s_->g_finish(pred, targets);
  } catch (const NumericalError&) {
    stash.restore(*s_->g);
    throw;
  }
}

void write_metrics_csv(const std::vector<EpochMetrics>& history, const fs::path& file) {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write '" + file.string() + "'");
  os << "epoch,g_loss,d_loss,d_score_fake,train_mse\n";
  for (const EpochMetrics& m : history) {
    os << m.epoch << ',' << format_real(m.g_loss) << ',' << format_real(m.d_loss) << ','
       << format_real(m.d_score_fake) << ',' << format_real(m.train_mse) << '\n';
  }
}

namespace {

void write_steps_csv(const std::vector<EpochMetrics>& history, const fs::path& file) {
  std::ofstream os(file);
  if (!os) throw IoError("cannot write '" + file.string() + "'");
  os << "epoch,d_steps,g_steps\n";
  for (const EpochMetrics& m : history) os << m.epoch << ',' << m.d_steps << ',' << m.g_steps << '\n';
}

}  // namespace

FitResult Trainer::fit(const DatasetManifest& manifest, const FitOptions& options) {
  std::vector<ClipEntry> train;
  for (const ClipEntry* c : manifest.clips_in(Split::Train)) train.push_back(*c);
  if (train.empty()) throw ConfigError("manifest has no training clips");
  LoaderConfig lc = options.loader;
  lc.frame_size = s_->model.frame_size;
  if (lc.window_total != s_->model.generator.input_frames + 1) {
    throw ConfigError("window size " + std::to_string(lc.window_total) + " does not match " +
                      std::to_string(s_->model.generator.input_frames) + " conditioning frames + 1 target");
  }
  // Sliding windows share frames, so a cache of one window decodes each frame once.
  lc.caching = true;
  lc.buffer_capacity = std::max(lc.buffer_capacity, lc.window_total);
  WindowLoader loader(std::move(train), lc);
  std::vector<FrameWindow> windows;
  windows.reserve(loader.window_count());
  while (auto w = loader.next()) windows.push_back(std::move(*w));
  if (windows.empty()) throw ConfigError("training clips are shorter than one window");
  spdlog::info("loaded {} training windows", windows.size());
  return fit(windows, options);
}

FitResult Trainer::fit(const std::vector<FrameWindow>& windows, const FitOptions& options) {
  State& s = *s_;
  const TrainConfig& tc = s.train;
  FitResult result;
  std::optional<fs::path> out = options.output_dir;
  if (out) {
    std::error_code ec;
    fs::create_directories(*out, ec);
    if (ec) throw IoError("cannot create '" + out->string() + "': " + ec.message());
  }
  auto flush_logs = [&] {
    if (!out) return;
    write_metrics_csv(result.history, *out / "metrics.csv");
    write_steps_csv(result.history, *out / "train_steps.csv");
  };
  State::Snapshot last_good = s.snapshot();
  if (tc.max_epochs == 0 || windows.empty()) {
    if (windows.empty() && tc.max_epochs > 0) throw ArgumentError("no training windows");
    if (out) State::write(last_good, *out / "checkpoint");
    flush_logs();
    return result;
  }

  std::mt19937_64 shuffle_rng(tc.seed * 0x9e3779b97f4a7c15ull + 0x2545f491u);
  std::deque<double> recent_scores;
  double best_mse = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(windows.size());

  for (std::size_t e = 0; e < tc.max_epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochMetrics m;
    m.epoch = s.epoch + 1;
    double g_sum = 0.0, d_sum = 0.0, mse_sum = 0.0, score_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
        std::vector<FrameWindow> batch;
        for (std::size_t k = start; k < std::min(order.size(), start + tc.batch_size); ++k) batch.push_back(windows[order[k]]);
        auto [inputs, targets] = batch_tensors(batch);
        // Frozen and training-mode passes both normalise with batch statistics,
        // so one training pass yields the critic's fakes and the activations
        // the generator step differentiates.
        const Tensor pred = s.g_forward(inputs);
        for (std::size_t k = 0; k < tc.d_steps_per_g; ++k) {
          d_sum += s.d_step(targets, pred);
          ++m.d_steps;
        }
        g_sum += s.g_finish(pred, targets);
        ++m.g_steps;
        mse_sum += s.last_mse;
        score_sum += s.last_fake_score;
        recent_scores.push_back(s.last_fake_score);
        if (recent_scores.size() > tc.d_score_window) recent_scores.pop_front();
      }
    } catch (const NumericalError& err) {
      s.restore(last_good);
      if (out) State::write(last_good, *out / "checkpoint");
      flush_logs();
      throw NumericalError(std::string("training diverged in epoch ") + std::to_string(m.epoch) + ": " + err.what() +
                           "; restored the checkpoint from epoch " + std::to_string(s.epoch));
    }
    m.g_loss = g_sum / static_cast<double>(m.g_steps);
    m.d_loss = d_sum / static_cast<double>(m.d_steps);
    m.train_mse = mse_sum / static_cast<double>(m.g_steps);
    m.d_score_fake = score_sum / static_cast<double>(m.g_steps);
    s.epoch = m.epoch;
    s.metrics = {{"g_loss", m.g_loss}, {"d_loss", m.d_loss}, {"d_score_fake", m.d_score_fake}, {"train_mse", m.train_mse}};
    result.history.push_back(m);
    result.total_d_steps += m.d_steps;
    result.total_g_steps += m.g_steps;
    spdlog::info("epoch {}: g_loss {:.5f} d_loss {:.5f} d_score_fake {:.4f} train_mse {:.6f}", m.epoch, m.g_loss,
                 m.d_loss, m.d_score_fake, m.train_mse);

    last_good = s.snapshot();
    if (out) {
      State::write(last_good, *out / "checkpoint");
      if (m.train_mse < best_mse) State::write(last_good, *out / "best");
      flush_logs();
    }
    best_mse = std::min(best_mse, m.train_mse);

    const double avg_score =
        std::accumulate(recent_scores.begin(), recent_scores.end(), 0.0) / static_cast<double>(recent_scores.size());
    if (std::abs(avg_score - tc.d_score_target) <= tc.d_score_tolerance && m.train_mse < tc.mse_stop) {
      result.reason = StopReason::Converged;
      break;
    }
    if (options.on_epoch && options.on_epoch(m)) {
      result.reason = StopReason::Callback;
      break;
    }
  }
  return result;
}

void Trainer::save(const fs::path& dir) const { State::write(s_->snapshot(), dir); }

Trainer Trainer::load(const fs::path& dir) {
  const KeyValues kv = parse_key_values(read_file(dir / "meta.txt"));
  for (const auto& [k, v] : kv) {
    if (k.rfind("model.", 0) && k.rfind("train.", 0) && k.rfind("loss.", 0) && k.rfind("state.", 0) &&
        k.rfind("metrics.", 0)) {
      throw ParseError("checkpoint meta: unknown key '" + k + "'");
    }
  }
  auto s = std::make_unique<State>(model_config_from(kv), train_config_from(kv), loss_weights_from(kv));
  auto epoch = kv.find("state.epoch");
  if (epoch == kv.end()) throw ParseError("checkpoint meta lacks state.epoch");
  s->epoch = parse_uint("state.epoch", epoch->second);
  for (const auto& [k, v] : kv) {
    if (k.rfind("metrics.", 0) == 0) s->metrics[k.substr(8)] = parse_real(k, v);
  }
  deserialize(*s->g, s->opt_g.get(), read_file(dir / "generator.bin"), (dir / "generator.bin").string());
  deserialize(*s->d, s->opt_d.get(), read_file(dir / "discriminator.bin"), (dir / "discriminator.bin").string());
  auto hash = kv.find("state.config_hash");
  if (hash != kv.end() && s->meta().at("state.config_hash") != hash->second) {
    throw ValidationError("checkpoint meta config hash does not match its contents");
  }
  return Trainer(std::move(s));
}

Trainer Trainer::transfer_init(const Trainer& base, const ModelConfig& model, TrainConfig train, LossWeights loss,
                               std::optional<double> learning_rate) {
  if (!base.model_config().architecture_compatible(model)) {
    KeyValues a, b;
    put(a, base.model_config());
    put(b, model);
    std::string diff;
    for (const auto& [k, v] : a) {
      if (k != "model.frame_size" && b[k] != v) diff += " " + k + " (" + v + " vs " + b[k] + ")";
    }
    throw ValidationError("checkpoint architecture differs from the new run:" + diff);
  }
  train.learning_rate = learning_rate.value_or(kTransferLearningRate);
  auto s = std::make_unique<State>(model, train, loss);
  deserialize(*s->g, nullptr, serialize(*base.s_->g, nullptr), "generator");
  deserialize(*s->d, nullptr, serialize(*base.s_->d, nullptr), "discriminator");
  return Trainer(std::move(s));
}

}  // namespace stemgan
