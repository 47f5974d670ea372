#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stemgan/error.hpp"
#include "stemgan/model.hpp"

using namespace stemgan;

namespace {

GeneratorConfig tiny_generator() {
  GeneratorConfig c;
  c.width_scale = 0.25;  // 8, 16
  c.encoder_stages = 2;
  c.decoder_stages = 2;
  c.attention_reduction = 4;
  c.input_frames = 2;
  return c;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<const Frame*> ptrs(const std::vector<Frame>& frames) {
  std::vector<const Frame*> p;
  for (const Frame& f : frames) p.push_back(&f);
  return p;
}

std::vector<Frame> random_frames(std::size_t count, std::size_t size, std::mt19937_64& rng) {
  std::vector<Frame> out;
  for (std::size_t i = 0; i < count; ++i) out.emplace_back(gradcheck::random_tensor({3, size, size}, rng));
  return out;
}

}  // namespace

TEST(GeneratorConfig, DefaultWidths) {
  GeneratorConfig c;
  EXPECT_EQ(c.stage_widths(), (std::vector<std::size_t>{32, 64, 128, 256}));
  c.width_scale = 0.25;
  EXPECT_EQ(c.stage_widths(), (std::vector<std::size_t>{8, 16, 32, 64}));
  EXPECT_NO_THROW(GeneratorConfig{}.validate());
}

TEST(GeneratorConfig, Rejections) {
  GeneratorConfig c;
  c.decoder_stages = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = GeneratorConfig{};
  c.shift_fraction = {1, 3};
  EXPECT_THROW(c.validate(), ArgumentError);
  c = GeneratorConfig{};
  c.width_scale = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ModelConfig, FrameSizeChecks) {
  ModelConfig m;
  EXPECT_NO_THROW(m.validate());
  m.frame_size = 64;
  EXPECT_NO_THROW(m.validate());
  m.frame_size = 48;  // 48 / 16 = 3 < 4
  EXPECT_THROW(m.validate(), ValidationError);
  m.frame_size = 100;
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Generator, ShapesAt64) {
  GeneratorConfig c;
  c.width_scale = 0.25;
  c.attention_reduction = 4;
  Generator g(c, 1);
  std::mt19937_64 rng(1);
  auto frames = random_frames(4, 64, rng);
  Tensor in = stack_frames(ptrs(frames));
  EncoderOutput e = g.encode(in);
  EXPECT_EQ(e.map.shape(), (Shape{1, 2 * 4 * 64, 4, 4}));
  ASSERT_EQ(e.skips.size(), 4u);
  EXPECT_EQ(e.skips[0].shape(), (Shape{1, 4 * 8, 64, 64}));
  EXPECT_EQ(e.skips[1].shape(), (Shape{1, 4 * 8, 32, 32}));
  EXPECT_EQ(e.skips[2].shape(), (Shape{1, 4 * 16, 16, 16}));
  EXPECT_EQ(e.skips[3].shape(), (Shape{1, 4 * 32, 8, 8}));
  Tensor out = g.decode(e.map, e.skips);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 64, 64}));
}

TEST(Generator, DefaultConfigAt160) {
  Generator g(GeneratorConfig{}, 2);
  g.set_mode(nn::Mode::Eval);
  std::mt19937_64 rng(2);
  auto frames = random_frames(4, 160, rng);
  EncoderOutput e = g.encode(stack_frames(ptrs(frames)));
  EXPECT_EQ(e.map.dim(2), 10u);  // 160 / 2^4
  Frame f = g.generate(ptrs(frames));
  EXPECT_EQ(f.tensor().shape(), (Shape{3, 160, 160}));
  EXPECT_TRUE(f.valid());
}

TEST(Generator, InferenceIsDeterministic) {
  Generator g(tiny_generator(), 3);
  g.set_mode(nn::Mode::Eval);
  std::mt19937_64 rng(3);
  auto frames = random_frames(2, 8, rng);
  Frame a = g.generate(ptrs(frames));
  Frame b = g.generate(ptrs(frames));
  EXPECT_EQ(a.tensor(), b.tensor());
}

TEST(Generator, SameSeedSameWeights) {
  Generator a(tiny_generator(), 7), b(tiny_generator(), 7), c(tiny_generator(), 8);
  EXPECT_EQ(state_hash(a), state_hash(b));
  EXPECT_NE(state_hash(a), state_hash(c));
}

TEST(Generator, UntrainedOutputIsValidFrame) {
  Generator g(tiny_generator(), 4);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 5; ++i) {
    auto frames = random_frames(2, 16, rng);
    EXPECT_TRUE(g.generate(ptrs(frames)).valid());
  }
}

TEST(Generator, RejectsMismatchedInputs) {
  Generator g(tiny_generator(), 5);
  std::mt19937_64 rng(5);
  std::vector<Frame> frames{Frame(gradcheck::random_tensor({3, 8, 8}, rng)),
                            Frame(gradcheck::random_tensor({3, 16, 16}, rng))};
  EXPECT_THROW(g.generate(ptrs(frames)), ArgumentError);
  auto three = random_frames(3, 8, rng);
  EXPECT_THROW(g.generate(ptrs(three)), ArgumentError);
  auto odd = random_frames(2, 6, rng);
  EXPECT_THROW(g.generate(ptrs(odd)), ArgumentError);
}

TEST(Generator, DecoderRejectsSkipMismatch) {
  Generator g(tiny_generator(), 6);
  std::mt19937_64 rng(6);
  auto frames = random_frames(2, 8, rng);
  EncoderOutput e = g.encode(stack_frames(ptrs(frames)));
  e.skips.pop_back();
  EXPECT_THROW(g.decode(e.map, e.skips), ArgumentError);
}

TEST(Generator, SingleFrameNoShiftStreamsAgree) {
  GeneratorConfig c = tiny_generator();
  c.input_frames = 1;
  c.shift_fraction = {0, 1};
  Generator g(c, 9);
  std::mt19937_64 rng(9);
  auto frames = random_frames(1, 8, rng);
  EncoderOutput e = g.encode(stack_frames(ptrs(frames)));
  auto halves = split_channels(e.map, {e.map.dim(1) / 2, e.map.dim(1) / 2});
  EXPECT_EQ(halves[0], halves[1]);
}

TEST(Generator, GradientCheck) {
  Generator g(tiny_generator(), 10);
  std::mt19937_64 rng(10);
  Tensor x = gradcheck::random_tensor({2, 2, 3, 8, 8}, rng);
  Tensor r = gradcheck::random_tensor({2, 3, 8, 8}, rng);
  g.zero_grad();
  g.forward(x);
  Tensor gx = g.backward(r);
  auto loss = [&] { return dot(g.forward(x), r); };

  // a random subset of coordinates per tensor keeps this fast
  std::vector<double> analytic, numeric;
  auto sample = [&](Tensor& value, const Tensor& grad) {
    std::uniform_int_distribution<std::size_t> pick(0, value.size() - 1);
    for (int k = 0; k < 6; ++k) {
      const std::size_t i = pick(rng);
      analytic.push_back(grad[i]);
      numeric.push_back(gradcheck::numeric_gradient(loss, value.data() + i, 1)[0]);
    }
  };
  for (nn::Parameter* p : g.parameters()) sample(p->value, p->grad);
  EXPECT_LE(gradcheck::relative_error(analytic, numeric), 1e-3);
  // raw frames are leaves: the stem skips their gradient
  EXPECT_EQ(gx.shape(), x.shape());
  EXPECT_EQ(gx.min(), 0.0);
  EXPECT_EQ(gx.max(), 0.0);
}

TEST(Generator, EveryDecoderParameterReceivesGradient) {
  Generator g(tiny_generator(), 11);
  std::mt19937_64 rng(11);
  Tensor x = gradcheck::random_tensor({2, 2, 3, 8, 8}, rng);
  g.zero_grad();
  Tensor y = g.forward(x);
  g.backward(gradcheck::random_tensor(y.shape(), rng));
  struct Check : nn::StateVisitor {
    int zero = 0, seen = 0;
    void parameter(const std::string& name, nn::Parameter& p) override {
      if (name.rfind("decoder.", 0) != 0) return;
      ++seen;
      double s = 0.0;
      for (double v : p.grad.values()) s += std::abs(v);
      if (s == 0.0) { ++zero; ADD_FAILURE() << name; }
    }
    void buffer(const std::string&, Tensor&) override {}
  } check;
  g.visit("", check);
  EXPECT_GT(check.seen, 0);
  EXPECT_EQ(check.zero, 0);
}

TEST(Discriminator, GridSizes) {
  Discriminator d(DiscriminatorConfig{}, 1);
  EXPECT_EQ(d.grid_side(160), 10u);
  EXPECT_EQ(d.grid_side(64), 4u);
  EXPECT_THROW(d.grid_side(32), ArgumentError);
  EXPECT_THROW(d.grid_side(100), ArgumentError);
}

TEST(Discriminator, ScoresInOpenUnitInterval) {
  DiscriminatorConfig c;
  c.width_scale = 0.125;
  Discriminator d(c, 2);
  d.set_mode(nn::Mode::Eval);
  std::mt19937_64 rng(2);
  Frame f(gradcheck::random_tensor({3, 64, 64}, rng));
  PatchScoreGrid grid = d.discriminate(f);
  EXPECT_EQ(grid.side(), 4u);
  for (double v : grid.scores.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Discriminator, DefaultAt160GivesTenByTen) {
  Discriminator d(DiscriminatorConfig{}, 3);
  d.set_mode(nn::Mode::Eval);
  std::mt19937_64 rng(3);
  EXPECT_EQ(d.discriminate(Frame(gradcheck::random_tensor({3, 160, 160}, rng))).side(), 10u);
}

TEST(Discriminator, ShiftedImpulseShiftsResponse) {
  // With evaluation-mode normalisation the critic is a stack of strided
  // convolutions: moving an impulse by the total stride moves the peak response
  // by one cell.
  DiscriminatorConfig c;
  c.width_scale = 0.125;
  c.stages = 2;
  Discriminator d(c, 4);
  d.set_mode(nn::Mode::Eval);
  Frame a(3, 32, 32, -1.0), b(3, 32, 32, -1.0);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    a.at(ch, 12, 12) = 1.0;
    b.at(ch, 16, 12) = 1.0;  // +4 rows = one cell
  }
  Tensor ga = d.discriminate(a).scores, gb = d.discriminate(b).scores;
  const Tensor base = d.discriminate(Frame(3, 32, 32, -1.0)).scores;
  auto peak = [&](const Tensor& g) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (std::abs(g[i] - base[i]) > std::abs(g[best] - base[best])) best = i;
    return best;
  };
  EXPECT_EQ(peak(gb), peak(ga) + ga.dim(1));
}

TEST(Discriminator, GradientCheck) {
  DiscriminatorConfig c;
  c.width_scale = 0.0625;  // 4, 8
  c.stages = 2;
  Discriminator d(c, 5);
  std::mt19937_64 rng(5);
  Tensor x = gradcheck::random_tensor({2, 3, 16, 16}, rng);
  Tensor r = gradcheck::random_tensor({2, 1, 4, 4}, rng);
  d.zero_grad();
  d.forward(x);
  Tensor gx = d.backward(r);
  auto loss = [&] { return dot(d.forward(x), r); };
  std::vector<double> analytic, numeric;
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = pick(rng);
    analytic.push_back(gx[i]);
    numeric.push_back(gradcheck::numeric_gradient(loss, x.data() + i, 1)[0]);
  }
  for (nn::Parameter* p : d.parameters()) {
    std::uniform_int_distribution<std::size_t> pp(0, p->value.size() - 1);
    for (int k = 0; k < 6; ++k) {
      const std::size_t i = pp(rng);
      analytic.push_back(p->grad[i]);
      numeric.push_back(gradcheck::numeric_gradient(loss, p->value.data() + i, 1)[0]);
    }
  }
  EXPECT_LE(gradcheck::relative_error(analytic, numeric), 1e-3);
}
