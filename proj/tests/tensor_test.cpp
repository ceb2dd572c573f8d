#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "seqsrl/errors.hpp"
#include "seqsrl/rng.hpp"
#include "seqsrl/tensor.hpp"

namespace seqsrl {
namespace {

using testing::check_gradients;
using testing::random_tensor;

TEST(TensorTest, ShapeInvariants) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 6u);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
  Tensor v({4});
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 4u);
}

TEST(TensorTest, MatmulIdentityAndScalar) {
  Tape tape;
  auto id = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  auto col = tape.constant(Tensor::matrix(2, 1, {3, 4}));
  auto out = tape.matmul(id, col);
  EXPECT_EQ(out.value().values(), (std::vector<double>{3, 4}));
  EXPECT_EQ(out.value().shape(), (std::vector<std::size_t>{2, 1}));

  auto s = tape.matmul(tape.constant(Tensor::scalar(2)), tape.constant(Tensor::scalar(5)));
  EXPECT_DOUBLE_EQ(s.value().item(), 10.0);
}

TEST(TensorTest, MatmulShapeErrorNamesBothShapes) {
  Tape tape;
  auto a = tape.constant(Tensor({3, 4}));
  auto b = tape.constant(Tensor({3, 2}));
  try {
    tape.matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3x4]"), std::string::npos);
    EXPECT_NE(msg.find("[3x2]"), std::string::npos);
  }
}

TEST(TensorTest, MatmulGradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor w = random_tensor({3, 2}, rng);
  w.set_requires_grad(false);
  auto loss = [&](Tape& t) { return t.sum(t.mul(t.matmul(t.param(a), t.param(b)), t.param(w))); };
  auto r = check_gradients(loss, {&a, &b});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TensorTest, MatmulNtGradient) {
  Rng rng(8);
  Tensor a = random_tensor({2, 5}, rng);
  Tensor b = random_tensor({3, 5}, rng);
  auto loss = [&](Tape& t) { return t.sum(t.tanh(t.matmul_nt(t.param(a), t.param(b)))); };
  auto r = check_gradients(loss, {&a, &b});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TensorTest, ElementwiseValues) {
  Tape tape;
  auto zero = tape.constant(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(tape.tanh(zero).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(tape.sigmoid(zero).value().item(), 0.5);
  auto a = tape.constant(Tensor::row({1, 2}));
  auto b = tape.constant(Tensor::row({3, 5}));
  EXPECT_EQ(tape.add(a, b).value().values(), (std::vector<double>{4, 7}));
  EXPECT_EQ(tape.mul(a, b).value().values(), (std::vector<double>{3, 10}));
  EXPECT_THROW(tape.add(a, tape.constant(Tensor::row({1, 2, 3}))), DimensionError);
}

TEST(TensorTest, TanhGradientAtPointThree) {
  Tensor x = Tensor::scalar(0.3);
  x.set_requires_grad(true);
  auto r = check_gradients([&](Tape& t) { return t.sum(t.tanh(t.param(x))); }, {&x});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_NEAR(x.grad()[0], 1.0 - std::tanh(0.3) * std::tanh(0.3), 1e-15);
}

TEST(TensorTest, ElementwiseGradients) {
  Rng rng(3);
  Tensor a = random_tensor({2, 3}, rng, 2.0);
  Tensor b = random_tensor({2, 3}, rng, 2.0);
  Tensor bias = random_tensor({1, 3}, rng);
  auto loss = [&](Tape& t) {
    auto x = t.add_row(t.mul(t.sigmoid(t.param(a)), t.tanh(t.param(b))), t.param(bias));
    return t.sum(t.mul(t.sub(x, t.scale(t.param(a), 0.5)), x));
  };
  auto r = check_gradients(loss, {&a, &b, &bias});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TensorTest, GatherRows) {
  Tensor table = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  table.set_requires_grad(true);
  {
    Tape tape;
    const std::size_t first[] = {0};
    EXPECT_EQ(tape.gather_rows(tape.param(table), first).value().values(), (std::vector<double>{1, 2, 3}));
    const std::size_t bad[] = {2};
    EXPECT_THROW(tape.gather_rows(tape.param(table), bad), IndexError);
  }
  Tape tape;
  const std::size_t repeated[] = {1, 1};
  tape.backward(tape.sum(tape.gather_rows(tape.param(table), repeated)));
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()),
            (std::vector<double>{0, 0, 0, 2, 2, 2}));
}

TEST(TensorTest, GatherRowsGradient) {
  Rng rng(11);
  Tensor table = random_tensor({5, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  const std::size_t ids[] = {4, 0, 4, 2};
  auto loss = [&](Tape& t) { return t.sum(t.tanh(t.mul(t.gather_rows(t.param(table), ids), t.param(w)))); };
  auto r = check_gradients(loss, {&table, &w});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TensorTest, ShapeOpsGradients) {
  Rng rng(5);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2, 2}, rng);
  Tensor c = random_tensor({1, 5}, rng);
  auto loss = [&](Tape& t) {
    Var parts[] = {t.param(a), t.param(b)};
    auto wide = t.concat_cols(parts);  // 2 x 5
    Var rows[] = {wide, t.param(c)};
    auto tall = t.concat_rows(rows);  // 3 x 5
    auto mid = t.slice_rows(t.slice_cols(tall, 1, 3), 1, 2);
    return t.sum(t.mul(mid, t.tanh(mid)));
  };
  auto r = check_gradients(loss, {&a, &b, &c});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TensorTest, SoftmaxRows) {
  Tape tape;
  auto s = tape.softmax_rows(tape.constant(Tensor::matrix(2, 3, {0, 0, 0, 1000, 0, -1000})));
  EXPECT_NEAR(s.value()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.value()[3], 1.0, 1e-15);

  Rng rng(9);
  Tensor x = random_tensor({2, 4}, rng, 3.0);
  Tensor w = random_tensor({2, 4}, rng);
  auto r = check_gradients([&](Tape& t) { return t.sum(t.mul(t.softmax_rows(t.param(x)), t.param(w))); },
                           {&x, &w});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TensorTest, SharedSoftmaxNll) {
  // Uniform scores over 4 generation + 2 copy events.
  Tape tape;
  auto gen = tape.constant(Tensor::row({0, 0, 0, 0}));
  auto copy = tape.constant(Tensor::row({0, 0}));
  const std::size_t both[] = {0, 1};
  EXPECT_NEAR(tape.shared_softmax_nll(gen, copy, 2, {}).value().item(), std::log(6.0), 1e-15);
  EXPECT_NEAR(tape.shared_softmax_nll(gen, copy, std::nullopt, both).value().item(), std::log(3.0), 1e-15);
  EXPECT_NEAR(tape.shared_softmax_nll(gen, copy, 1, both).value().item(), std::log(2.0), 1e-15);
  EXPECT_THROW(tape.shared_softmax_nll(gen, copy, std::nullopt, {}), ContractError);
  EXPECT_NEAR(tape.shared_softmax_nll(gen, Var{}, 3, {}).value().item(), std::log(4.0), 1e-15);

  Rng rng(4);
  Tensor g = random_tensor({1, 5}, rng, 3.0);
  Tensor c = random_tensor({1, 3}, rng, 3.0);
  const std::size_t positions[] = {0, 2};
  auto r = check_gradients(
      [&](Tape& t) { return t.shared_softmax_nll(t.param(g), t.param(c), 4, positions); }, {&g, &c});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(TensorTest, SharedSoftmaxNllIsStableForExtremeScores) {
  Tape tape;
  auto gen = tape.constant(Tensor::row({800, -800}));
  auto copy = tape.constant(Tensor::row({-900}));
  const std::size_t pos[] = {0};
  const double nll = tape.shared_softmax_nll(gen, copy, std::nullopt, pos).value().item();
  EXPECT_TRUE(std::isfinite(nll));
  EXPECT_NEAR(nll, 1700.0, 1e-9);
}

TEST(TensorTest, LstmSequenceGradient) {
  Rng rng(21);
  const std::size_t in = 3, hidden = 4, steps = 5;
  Tensor x = random_tensor({steps, in}, rng);
  Tensor wi = random_tensor({in, 4 * hidden}, rng, 0.5);
  Tensor wr = random_tensor({hidden, 4 * hidden}, rng, 0.5);
  Tensor b = random_tensor({1, 4 * hidden}, rng, 0.5);
  Tensor readout = random_tensor({steps, hidden}, rng);
  readout.set_requires_grad(false);
  for (bool reverse : {false, true}) {
    auto loss = [&](Tape& t) {
      auto h = t.lstm_sequence(t.param(x), t.param(wi), t.param(wr), t.param(b), reverse);
      return t.sum(t.mul(h, t.param(readout)));
    };
    auto r = check_gradients(loss, {&x, &wi, &wr, &b});
    EXPECT_LT(r.max_rel_error, 1e-6) << "reverse=" << reverse << " worst " << r.worst;
  }
}

TEST(TensorTest, LstmSequenceMatchesStepwiseComposition) {
  Rng rng(2);
  const std::size_t in = 2, hidden = 3, steps = 4;
  Tensor x = random_tensor({steps, in}, rng);
  Tensor wi = random_tensor({in, 4 * hidden}, rng);
  Tensor wr = random_tensor({hidden, 4 * hidden}, rng);
  Tensor b = random_tensor({1, 4 * hidden}, rng);
  Tape tape;
  auto fused = tape.lstm_sequence(tape.param(x), tape.param(wi), tape.param(wr), tape.param(b), true);
  auto h = tape.constant(Tensor({1, hidden}));
  auto c = tape.constant(Tensor({1, hidden}));
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = steps - 1 - s;
    auto g = tape.add_row(
        tape.add(tape.matmul(tape.slice_rows(tape.param(x), t, 1), tape.param(wi)), tape.matmul(h, tape.param(wr))),
        tape.param(b));
    auto i = tape.sigmoid(tape.slice_cols(g, 0, hidden));
    auto f = tape.sigmoid(tape.slice_cols(g, hidden, hidden));
    auto u = tape.tanh(tape.slice_cols(g, 2 * hidden, hidden));
    auto o = tape.sigmoid(tape.slice_cols(g, 3 * hidden, hidden));
    c = tape.add(tape.mul(f, c), tape.mul(i, u));
    h = tape.mul(o, tape.tanh(c));
    for (std::size_t k = 0; k < hidden; ++k) {
      EXPECT_NEAR(fused.value().at(t, k), h.value()[k], 1e-14);
    }
  }
}

TEST(TensorTest, PackedLstmMatchesSeparateRuns) {
  Rng rng(31);
  const std::size_t in = 3, hidden = 4;
  const std::vector<std::size_t> lengths = {2, 5, 1, 3};
  Tensor x = random_tensor({11, in}, rng);
  Tensor wi = random_tensor({in, 4 * hidden}, rng, 0.5);
  Tensor wr = random_tensor({hidden, 4 * hidden}, rng, 0.5);
  Tensor b = random_tensor({1, 4 * hidden}, rng, 0.5);
  for (bool reverse : {false, true}) {
    Tape tape;
    auto packed = tape.lstm_sequence(tape.param(x), tape.param(wi), tape.param(wr), tape.param(b), reverse, lengths);
    std::size_t offset = 0;
    for (std::size_t n : lengths) {
      auto alone = tape.lstm_sequence(tape.slice_rows(tape.param(x), offset, n), tape.param(wi), tape.param(wr),
                                      tape.param(b), reverse);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < hidden; ++k) {
          EXPECT_NEAR(packed.value().at(offset + r, k), alone.value().at(r, k), 1e-14);
        }
      }
      offset += n;
    }
  }
  Tape tape;
  const std::size_t bad[] = {4, 4};
  EXPECT_THROW(tape.lstm_sequence(tape.param(x), tape.param(wi), tape.param(wr), tape.param(b), false, bad),
               DimensionError);
}

TEST(TensorTest, PackedLstmGradient) {
  Rng rng(32);
  const std::size_t in = 2, hidden = 3;
  const std::vector<std::size_t> lengths = {3, 1, 4};
  Tensor x = random_tensor({8, in}, rng);
  Tensor wi = random_tensor({in, 4 * hidden}, rng, 0.5);
  Tensor wr = random_tensor({hidden, 4 * hidden}, rng, 0.5);
  Tensor b = random_tensor({1, 4 * hidden}, rng, 0.5);
  Tensor readout = random_tensor({8, hidden}, rng);
  readout.set_requires_grad(false);
  for (bool reverse : {false, true}) {
    auto loss = [&](Tape& t) {
      auto h = t.lstm_sequence(t.param(x), t.param(wi), t.param(wr), t.param(b), reverse, lengths);
      return t.sum(t.mul(h, t.param(readout)));
    };
    auto r = check_gradients(loss, {&x, &wi, &wr, &b});
    EXPECT_LT(r.max_rel_error, 1e-6) << "reverse=" << reverse << " worst " << r.worst;
  }
}

TEST(TensorTest, BackwardAnalyticAndIndependentParameter) {
  Tensor w = Tensor::row({1, 2});
  Tensor p = Tensor::row({5});
  w.set_requires_grad(true);
  p.set_requires_grad(true);
  Tape tape;
  auto wv = tape.param(w);
  tape.param(p);
  tape.backward(tape.sum(tape.mul(wv, wv)));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{2, 4}));
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(TensorTest, BackwardRejectsNonScalarAndReuse) {
  Tensor w = Tensor::row({1, 2});
  w.set_requires_grad(true);
  Tape tape;
  auto wv = tape.param(w);
  EXPECT_THROW(tape.backward(wv), ContractError);
  auto loss = tape.sum(wv);
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), ContractError);
  EXPECT_THROW(tape.tanh(wv), ContractError);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
}

TEST(TensorTest, BackwardVisitsNodesInReverseExecutionOrder) {
  Tensor w = Tensor::row({0.5, -0.25});
  w.set_requires_grad(true);
  Tape tape;
  auto a = tape.tanh(tape.param(w));
  auto b = tape.sigmoid(a);
  auto c = tape.mul(a, b);
  auto loss = tape.sum(c);
  tape.backward(loss);
  EXPECT_EQ(tape.backward_order(), (std::vector<std::size_t>{loss.index(), c.index(), b.index(), a.index()}));
}

TEST(TensorTest, BackwardIsAdditiveAcrossLosses) {
  Rng rng(13);
  Tensor w = random_tensor({2, 3}, rng);
  Tensor m = random_tensor({3, 2}, rng);
  auto first = [&](Tape& t) { return t.sum(t.tanh(t.matmul(t.param(w), t.param(m)))); };
  auto second = [&](Tape& t) { return t.sum(t.mul(t.param(w), t.param(w))); };

  w.zero_grad();
  m.zero_grad();
  {
    Tape t1;
    t1.backward(first(t1));
    Tape t2;
    t2.backward(second(t2));
  }
  const std::vector<double> separate_w(w.grad().begin(), w.grad().end());
  const std::vector<double> separate_m(m.grad().begin(), m.grad().end());

  w.zero_grad();
  m.zero_grad();
  {
    Tape t;
    t.backward(t.add(first(t), second(t)));
  }
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w.grad()[i], separate_w[i], 1e-14);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m.grad()[i], separate_m[i], 1e-14);
}

TEST(TensorTest, DropoutIsDeterministicPerSeedAndScalesKeptUnits) {
  Tensor x({1, 200}, 1.0);
  Rng r1(99), r2(99);
  Tape tape;
  auto a = tape.dropout(tape.constant(x), 0.4, r1);
  auto b = tape.dropout(tape.constant(x), 0.4, r2);
  EXPECT_EQ(a.value().values(), b.value().values());
  for (double v : a.value().values()) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.6) < 1e-15);
  auto c = tape.constant(x);
  EXPECT_EQ(tape.dropout(c, 0.0, r1).index(), c.index());
  EXPECT_THROW(tape.dropout(c, 1.0, r1), ContractError);
}

TEST(TensorTest, RandomShapesPassGradientCheck) {
  Rng rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 1 + rng.below(3), k = 1 + rng.below(4), n = 1 + rng.below(3);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor bias = random_tensor({1, n}, rng);
    auto loss = [&](Tape& t) {
      auto z = t.add_row(t.matmul(t.param(a), t.param(b)), t.param(bias));
      return t.sum(t.mul(t.softmax_rows(z), t.sigmoid(z)));
    };
    auto r = check_gradients(loss, {&a, &b, &bias});
    EXPECT_LT(r.max_rel_error, 1e-4) << "trial " << trial << " worst " << r.worst;
  }
}

}  // namespace
}  // namespace seqsrl
