#include "pansharp/degradation_ops.hpp"
#include "pansharp/wald.hpp"
#include "testing.hpp"

using namespace pansharp;
using testing::random_tensor;

namespace {

using VarD = Var<double>;
using TensorD = Tensor<double>;

// Dense matrices over a single-sample (C, H, W) layout, built directly from
// the weight tensors with explicit index arithmetic.
Eigen::Index idx(int c, int y, int x, int h, int w) { return (static_cast<Eigen::Index>(c) * h + y) * w + x; }

Eigen::MatrixXd conv_matrix(const TensorD& wt, int h, int w, int stride, int pad) {
  const int cout = wt.n(), cin = wt.c(), k = wt.h();
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(cout * oh * ow, cin * h * w);
  for (int co = 0; co < cout; ++co)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        for (int ci = 0; ci < cin; ++ci)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
              const int sy = y * stride + i - pad, sx = x * stride + j - pad;
              if (sy >= 0 && sy < h && sx >= 0 && sx < w) m(idx(co, y, x, oh, ow), idx(ci, sy, sx, h, w)) += wt.plane(co, ci)(i, j);
            }
  return m;
}

Eigen::MatrixXd conv_transpose_matrix(const TensorD& wt, int h, int w, int stride) {
  const int cin = wt.n(), cout = wt.c(), k = wt.h();
  const int oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(cout * oh * ow, cin * h * w);
  for (int ci = 0; ci < cin; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int co = 0; co < cout; ++co)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) m(idx(co, y * stride + i, x * stride + j, oh, ow), idx(ci, y, x, h, w)) += wt.plane(ci, co)(i, j);
  return m;
}

void randomize(const ParamList<double>& params, std::uint64_t seed) {
  for (const auto& p : params) p.var.mutable_value() = random_tensor(p.var.shape(), seed++);
}

}  // namespace

TEST_CASE("learned down operator") {
  Rng rng(1);
  SUBCASE("shape contract") {
    LearnedDownOp<float> down(4, 4, rng);
    CHECK(down(Var<float>::constant(Tensor<float>({1, 4, 128, 128}))).shape() == Shape{1, 4, 32, 32});
    CHECK_THROWS_AS(down(Var<float>::constant(Tensor<float>({1, 4, 30, 32}))), GeometryError);
    for (int s : {2, 3, 4})
      for (int m : {1, 2, 5}) {
        LearnedDownOp<float> d(3, s, rng);
        CHECK(d(Var<float>::constant(Tensor<float>({2, 3, m * s, 2 * m * s}))).shape() == Shape{2, 3, m, 2 * m});
      }
  }
  SUBCASE("average-pool weights keep a constant") {
    LearnedDownOp<double> down(2, 4, rng);
    down.set_average_pool();
    const auto out = down(VarD::constant(TensorD({1, 2, 16, 16}, 0.42))).value();
    CHECK((out.data().array() - 0.42).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("matches its dense matrix on tiny inputs") {
    for (int s : {2, 4}) {
      LearnedDownOp<double> down(2, s, rng);
      randomize(down.parameters(), 10 + s);
      const auto x0 = random_tensor({1, 2, 8, 8}, 3);
      const Eigen::MatrixXd a =
          conv_matrix(down.reduce.weight.value(), 8, 8, s, 0) * conv_matrix(down.blur.weight.value(), 8, 8, 1, 1);
      const Eigen::VectorXd expect = a * x0.data();
      CHECK((down(VarD::constant(x0)).value().data() - expect).cwiseAbs().maxCoeff() < 1e-5);
    }
  }
  SUBCASE("linear in the input") {
    LearnedDownOp<double> down(3, 2, rng);
    randomize(down.parameters(), 20);
    const auto x = random_tensor({1, 3, 8, 8}, 4), y = random_tensor({1, 3, 8, 8}, 5);
    TensorD combo(x.shape());
    combo.data() = 0.7 * x.data() - 1.9 * y.data();
    const Eigen::VectorXd lhs = down(VarD::constant(combo)).value().data();
    const Eigen::VectorXd rhs =
        0.7 * down(VarD::constant(x)).value().data() - 1.9 * down(VarD::constant(y)).value().data();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("gradients") {
    LearnedDownOp<double> down(2, 2, rng);
    randomize(down.parameters(), 30);
    const auto probe_w = VarD::constant(random_tensor({1, 2, 4, 4}, 6));
    auto loss = [&](const VarD& x) { return sum(mul(down(x), probe_w)); };
    CHECK(testing::gradient_check(loss, random_tensor({1, 2, 8, 8}, 7)) < 1e-3);
    const auto x = VarD::constant(random_tensor({1, 2, 8, 8}, 8));
    for (const auto& p : down.parameters())
      CHECK(testing::parameter_gradient_check([&] { return loss(x); }, p.var) < 1e-3);
  }
}

TEST_CASE("learned up operator") {
  Rng rng(2);
  SUBCASE("shape contract") {
    LearnedUpOp<float> up(4, 4, rng);
    CHECK(up(Var<float>::constant(Tensor<float>({1, 4, 32, 32}))).shape() == Shape{1, 4, 128, 128});
  }
  SUBCASE("zero in, zero out; bias shows up as a constant") {
    LearnedUpOp<double> up(2, 2, rng);
    CHECK(up(VarD::constant(TensorD({1, 2, 4, 4}))).value().data().isZero());
    LearnedUpOp<double> biased(2, 2, rng, true);
    biased.bias.mutable_value().data() << 0.25, -0.5;
    const auto out = biased(VarD::constant(TensorD({1, 2, 4, 4}))).value();
    CHECK((out.plane(0, 0).array() == 0.25).all());
    CHECK((out.plane(0, 1).array() == -0.5).all());
  }
  SUBCASE("matches its dense matrix on tiny inputs") {
    for (int s : {2, 4}) {
      LearnedUpOp<double> up(2, s, rng);
      randomize(up.parameters(), 40 + s);
      const int lo = 8 / s;
      const auto x0 = random_tensor({1, 2, lo, lo}, 9);
      const Eigen::MatrixXd a =
          conv_matrix(up.blur.weight.value(), 8, 8, 1, 1) * conv_transpose_matrix(up.expand.weight.value(), lo, lo, s);
      const Eigen::VectorXd expect = a * x0.data();
      CHECK((up(VarD::constant(x0)).value().data() - expect).cwiseAbs().maxCoeff() < 1e-5);
    }
  }
  SUBCASE("gradients") {
    LearnedUpOp<double> up(2, 2, rng);
    randomize(up.parameters(), 50);
    const auto probe_w = VarD::constant(random_tensor({1, 2, 8, 8}, 10));
    auto loss = [&](const VarD& x) { return sum(mul(up(x), probe_w)); };
    CHECK(testing::gradient_check(loss, random_tensor({1, 2, 4, 4}, 11)) < 1e-3);
    const auto x = VarD::constant(random_tensor({1, 2, 4, 4}, 12));
    for (const auto& p : up.parameters())
      CHECK(testing::parameter_gradient_check([&] { return loss(x); }, p.var) < 1e-3);
  }
}

TEST_CASE("fixed degradation oracle") {
  const auto op = FixedDegradeOracle<double>::for_ratio(4);
  SUBCASE("exact adjoint over random pairs") {
    for (std::uint64_t t = 0; t < 100; ++t) {
      const auto x = random_tensor({1, 2, 16, 12}, 100 + t);
      const auto y = random_tensor({1, 2, 4, 3}, 300 + t);
      CHECK(std::abs(op.apply(x).data().dot(y.data()) - x.data().dot(op.adjoint(y).data())) < 1e-6);
    }
  }
  SUBCASE("constant maps to constant") {
    const auto out = op.apply(TensorD({1, 3, 16, 16}, 0.3));
    CHECK((out.data().array() - 0.3).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("impulse reproduces the kernel footprint") {
    TensorD x({1, 1, 32, 32});
    x.plane(0, 0)(16, 16) = 1;
    const auto out = op.apply(x);
    const double sigma = 2.0;
    double norm = 0;
    for (int i = -4; i <= 4; ++i)
      for (int j = -4; j <= 4; ++j) norm += std::exp(-(i * i + j * j) / (2 * sigma * sigma));
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        const int dy = 16 - 4 * y, dx = 16 - 4 * xx;
        const double expect =
            std::abs(dy) <= 4 && std::abs(dx) <= 4 ? std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)) / norm : 0.0;
        CHECK(std::abs(out.plane(0, 0)(y, xx) - expect) < 1e-12);
      }
  }
  SUBCASE("agrees with the simulator's blur and decimation") {
    const auto img = testing::random_image(32, 32, 3, 13);
    const auto sim = blur_decimate(img, DegradationConfig::for_ratio(4));
    const auto out = FixedDegradeOracle<float>::for_ratio(4).apply(to_tensor(img));
    CHECK((to_image(out, 0).data() - sim.data()).cwiseAbs().maxCoeff() < 1e-6f);
  }
  SUBCASE("graph nodes back-propagate through the adjoint") {
    const auto probe_w = VarD::constant(random_tensor({1, 1, 4, 4}, 14));
    CHECK(testing::gradient_check([&](const VarD& x) { return sum(mul(op.down(x), probe_w)); },
                                  random_tensor({1, 1, 16, 16}, 15)) < 1e-6);
    const auto probe_u = VarD::constant(random_tensor({1, 1, 16, 16}, 16));
    CHECK(testing::gradient_check([&](const VarD& y) { return sum(mul(op.up(y), probe_u)); },
                                  random_tensor({1, 1, 4, 4}, 17)) < 1e-6);
  }
}
