#include <complex>

#include "pansharp/ops.hpp"
#include "testing.hpp"

using namespace pansharp;
using testing::gradient_check;
using testing::parameter_gradient_check;
using testing::random_tensor;

namespace {

using VarD = Var<double>;
using TensorD = Tensor<double>;

// Contract an output against a fixed random weight so every output element
// contributes to the scalar loss with a distinct coefficient.
VarD probe(const VarD& v, std::uint64_t seed = 99) {
  return sum(mul(v, VarD::constant(random_tensor(v.shape(), seed))));
}

constexpr double kTol = 1e-6;

double naive_conv(const TensorD& x, const TensorD& w, int n, int co, int y, int xx, int stride, int pad) {
  double acc = 0;
  const int k = w.h();
  for (int ci = 0; ci < x.c(); ++ci)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const int sy = y * stride + i - pad, sx = xx * stride + j - pad;
        if (sy < 0 || sy >= x.h() || sx < 0 || sx >= x.w()) continue;
        acc += w.plane(co, ci)(i, j) * x.plane(n, ci)(sy, sx);
      }
  return acc;
}

}  // namespace

TEST_CASE("broadcasting arithmetic gradients") {
  const auto a0 = random_tensor({2, 3, 4, 5}, 1);
  const auto b = VarD::constant(random_tensor({1, 3, 1, 1}, 2));
  CHECK(gradient_check([&](const VarD& a) { return probe(add(a, b)); }, a0) < kTol);
  CHECK(gradient_check([&](const VarD& a) { return probe(mul(a, b)); }, a0) < kTol);
  CHECK(gradient_check([&](const VarD& a) { return probe(sub(b, a)); }, a0) < kTol);

  const auto full = VarD::constant(a0);
  CHECK(gradient_check([&](const VarD& s) { return probe(mul(full, s)); }, random_tensor({1, 3, 1, 1}, 3)) < kTol);
  CHECK(gradient_check([&](const VarD& s) { return probe(add(full, s)); }, random_tensor({2, 1, 4, 5}, 4)) < kTol);
  CHECK(gradient_check([&](const VarD& a) { return probe(scale(add_scalar(neg(a), 0.3), 2.5)); }, a0) < kTol);
  CHECK_THROWS_AS(add(VarD::constant(TensorD({1, 2, 3, 3})), VarD::constant(TensorD({1, 3, 3, 3}))), GeometryError);
}

TEST_CASE("pointwise nonlinearity gradients") {
  // Keep samples away from the kinks of relu-type functions.
  auto x0 = random_tensor({1, 2, 3, 4}, 5);
  for (Eigen::Index i = 0; i < x0.size(); ++i)
    if (std::abs(x0.data()[i]) < 0.05) x0.data()[i] += 0.1;
  CHECK(gradient_check([](const VarD& a) { return probe(leaky_relu(a)); }, x0) < kTol);
  CHECK(gradient_check([](const VarD& a) { return probe(relu(a)); }, x0) < kTol);
  CHECK(gradient_check([](const VarD& a) { return probe(softplus(scale(a, 4.0))); }, x0) < kTol);
  CHECK(gradient_check([](const VarD& a) { return probe(gelu(scale(a, 3.0))); }, x0) < kTol);
  CHECK(softplus_value(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus_value(800.0) == doctest::Approx(800.0));
  CHECK(softplus_value(-800.0) >= 0.0);
}

TEST_CASE("reductions and L1 losses") {
  auto x0 = random_tensor({2, 2, 3, 3}, 6);
  for (Eigen::Index i = 0; i < x0.size(); ++i)
    if (std::abs(x0.data()[i]) < 0.05) x0.data()[i] = 0.2;
  CHECK(mean(VarD::constant(x0)).item() == doctest::Approx(x0.data().mean()));
  CHECK(mean_abs(VarD::constant(x0)).item() == doctest::Approx(x0.data().cwiseAbs().mean()));
  CHECK(gradient_check([](const VarD& a) { return scale(sum(a), 0.7); }, x0) < kTol);
  CHECK(gradient_check([](const VarD& a) { return mean(mul(a, a)); }, x0) < kTol);
  CHECK(gradient_check([](const VarD& a) { return mean_abs(a); }, x0) < kTol);

  const auto weight = random_tensor({2, 2, 3, 3}, 7, 0, 1);
  CHECK(gradient_check([&](const VarD& a) { return weighted_mean_abs(a, weight); }, x0) < kTol);
}

TEST_CASE("layout op gradients") {
  const auto x0 = random_tensor({2, 3, 4, 4}, 8);
  SUBCASE("gather with repeated indices") {
    auto idx = std::make_shared<std::vector<Eigen::Index>>();
    std::mt19937_64 rng(1);
    for (int i = 0; i < 40; ++i) idx->push_back(static_cast<Eigen::Index>(rng() % x0.size()));
    const Shape out{1, 1, 5, 8};
    const auto g = gather(VarD::constant(x0), idx, out);
    for (int i = 0; i < 40; ++i) CHECK(g.value().data()[i] == x0.data()[(*idx)[i]]);
    CHECK(gradient_check([&](const VarD& a) { return probe(gather(a, idx, out)); }, x0) < kTol);
  }
  SUBCASE("reshape") {
    CHECK(gradient_check([](const VarD& a) { return probe(reshape(a, Shape{1, 1, 6, 16})); }, x0) < kTol);
  }
  SUBCASE("concat and slice along every axis") {
    for (int axis = 0; axis < 4; ++axis) {
      const auto other = VarD::constant(random_tensor(x0.shape(), 9 + axis));
      CHECK(gradient_check([&](const VarD& a) { return probe(concat<double>({a, other, a}, axis)); }, x0) < kTol);
      CHECK(gradient_check([&](const VarD& a) { return probe(slice(a, axis, 1, 1)); }, x0) < kTol);
      const auto joined = concat<double>({VarD::constant(x0), other}, axis);
      CHECK(slice(joined, axis, 0, x0.shape()[axis]).value().data() == x0.data());
      CHECK(slice(joined, axis, x0.shape()[axis], x0.shape()[axis]).value().data() == other.value().data());
    }
  }
}

TEST_CASE("conv2d matches a direct loop and has correct gradients") {
  const auto x0 = random_tensor({2, 3, 7, 6}, 10);
  const auto w0 = random_tensor({4, 3, 3, 3}, 11);
  const auto b0 = random_tensor({1, 4, 1, 1}, 12);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}, std::pair{2, 0}}) {
    const auto x = VarD::constant(x0);
    const auto w = VarD::parameter(w0);
    const auto b = VarD::parameter(b0);
    const auto y = conv2d(x, w, &b, stride, pad).value();
    for (int n = 0; n < 2; ++n)
      for (int co = 0; co < 4; ++co)
        for (int yy = 0; yy < y.h(); ++yy)
          for (int xx = 0; xx < y.w(); ++xx)
            CHECK(std::abs(y.plane(n, co)(yy, xx) - naive_conv(x0, w0, n, co, yy, xx, stride, pad) -
                           b0.data()[co]) < 1e-12);

    CHECK(gradient_check([&](const VarD& a) { return probe(conv2d(a, w, &b, stride, pad)); }, x0) < kTol);
    CHECK(parameter_gradient_check([&] { return probe(conv2d(x, w, &b, stride, pad)); }, w) < kTol);
    CHECK(parameter_gradient_check([&] { return probe(conv2d(x, w, &b, stride, pad)); }, b) < kTol);
  }
  SUBCASE("1x1 fast path") {
    const auto w1 = VarD::parameter(random_tensor({5, 3, 1, 1}, 13));
    const auto y = conv2d<double>(VarD::constant(x0), w1, nullptr, 1, 0).value();
    CHECK(std::abs(y.plane(1, 2)(3, 4) - naive_conv(x0, w1.value(), 1, 2, 3, 4, 1, 0)) < 1e-12);
    CHECK(gradient_check([&](const VarD& a) { return probe(conv2d<double>(a, w1, nullptr, 1, 0)); }, x0) < kTol);
    CHECK(parameter_gradient_check([&] { return probe(conv2d<double>(VarD::constant(x0), w1, nullptr, 1, 0)); }, w1) <
          kTol);
  }
}

TEST_CASE("transposed conv is the adjoint of the strided conv") {
  const auto w = VarD::constant(random_tensor({3, 2, 4, 4}, 14));  // (Cin_fwd=3 -> Cout_fwd=2) reversed below
  const auto x0 = random_tensor({1, 3, 3, 3}, 15);
  const auto y0 = random_tensor({1, 2, 12, 12}, 16);
  // <convT(x), y> == <x, conv(y)> with the same weight viewed as (Cout, Cin).
  const auto up = conv_transpose2d(VarD::constant(x0), w, 4, 0).value();
  REQUIRE(up.shape().h == 12);
  const auto down = conv2d<double>(VarD::constant(y0), w, nullptr, 4, 0).value();
  CHECK(std::abs(up.data().dot(y0.data()) - x0.data().dot(down.data())) < 1e-10);

  const auto wp = VarD::parameter(w.value());
  CHECK(gradient_check([&](const VarD& a) { return probe(conv_transpose2d(a, wp, 4, 0)); }, x0) < kTol);
  CHECK(parameter_gradient_check([&] { return probe(conv_transpose2d(VarD::constant(x0), wp, 4, 0)); }, wp) < kTol);
}

TEST_CASE("DFT matches the definition and inverts") {
  const auto x0 = random_tensor({1, 2, 5, 4}, 17);
  const auto z = dft2(VarD::constant(x0)).value();
  REQUIRE(z.c() == 4);
  const double pi = std::acos(-1.0);
  for (int c = 0; c < 2; ++c)
    for (int u = 0; u < 5; ++u)
      for (int v = 0; v < 4; ++v) {
        std::complex<double> acc = 0;
        for (int y = 0; y < 5; ++y)
          for (int x = 0; x < 4; ++x)
            acc += x0.plane(0, c)(y, x) * std::polar(1.0, -2 * pi * (double(u * y) / 5 + double(v * x) / 4));
        CHECK(std::abs(z.plane(0, c)(u, v) - acc.real()) < 1e-10);
        CHECK(std::abs(z.plane(0, 2 + c)(u, v) - acc.imag()) < 1e-10);
      }
  const auto back = idft2_real(VarD::constant(z)).value();
  CHECK((back.data() - x0.data()).cwiseAbs().maxCoeff() < 1e-10);

  CHECK(gradient_check([](const VarD& a) { return probe(dft2(a)); }, x0) < kTol);
  CHECK(gradient_check([](const VarD& a) { return probe(idft2_real(a)); }, random_tensor({1, 4, 5, 4}, 18)) < kTol);
}

TEST_CASE("polar conversion round-trips and differentiates") {
  const auto z0 = random_tensor({1, 4, 3, 3}, 19);
  const auto ap = complex_to_polar(VarD::constant(z0)).value();
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        const std::complex<double> v(z0.plane(0, c)(y, x), z0.plane(0, c + 2)(y, x));
        CHECK(std::abs(ap.plane(0, c)(y, x) - std::abs(v)) < 1e-6);
        CHECK(std::abs(ap.plane(0, c + 2)(y, x) - std::arg(v)) < 1e-9);
      }
  const auto back = polar_to_complex(VarD::constant(ap)).value();
  CHECK((back.data() - z0.data()).cwiseAbs().maxCoeff() < 1e-6);

  CHECK(gradient_check([](const VarD& a) { return probe(complex_to_polar(a)); }, z0) < 1e-5);
  CHECK(gradient_check([](const VarD& a) { return probe(polar_to_complex(a)); }, ap) < kTol);
  // Full frequency path used by the fusion block.
  CHECK(gradient_check([](const VarD& a) { return probe(idft2_real(polar_to_complex(complex_to_polar(dft2(a))))); },
                       random_tensor({1, 2, 4, 4}, 20)) < 1e-5);
}

TEST_CASE("token op gradients") {
  SUBCASE("matmul") {
    const auto a0 = random_tensor({2, 1, 3, 4}, 21);
    const auto b = VarD::parameter(random_tensor({1, 1, 4, 5}, 22));
    const auto bt = VarD::parameter(random_tensor({2, 1, 5, 4}, 23));
    const auto prod = matmul(VarD::constant(a0), b).value();
    const Eigen::MatrixXd expect = a0.matrix(1) * b.value().matrix(0);
    CHECK((prod.matrix(1) - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(gradient_check([&](const VarD& a) { return probe(matmul(a, b)); }, a0) < kTol);
    CHECK(gradient_check([&](const VarD& a) { return probe(matmul(a, bt, true)); }, a0) < kTol);
    CHECK(parameter_gradient_check([&] { return probe(matmul(VarD::constant(a0), b)); }, b) < kTol);
    CHECK(parameter_gradient_check([&] { return probe(matmul(VarD::constant(a0), bt, true)); }, bt) < kTol);
    CHECK_THROWS_AS(matmul(VarD::constant(a0), bt), GeometryError);
  }
  SUBCASE("softmax") {
    const auto x0 = random_tensor({2, 1, 3, 6}, 24, -3, 3);
    const auto y = softmax_last(VarD::constant(x0)).value();
    Eigen::Map<const RowMatrix<double>> rows(y.ptr(), 6, 6);
    CHECK((rows.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(gradient_check([](const VarD& a) { return probe(softmax_last(a)); }, x0) < kTol);
  }
  SUBCASE("layer norm") {
    const auto x0 = random_tensor({2, 1, 3, 6}, 25);
    const auto gain = VarD::parameter(random_tensor({1, 1, 1, 6}, 26, 0.5, 1.5));
    const auto shift = VarD::parameter(random_tensor({1, 1, 1, 6}, 27));
    const auto unit = layer_norm_last(VarD::constant(x0), VarD::constant(TensorD({1, 1, 1, 6}, 1.0)),
                                      VarD::constant(TensorD({1, 1, 1, 6}))).value();
    Eigen::Map<const RowMatrix<double>> rows(unit.ptr(), 6, 6);
    CHECK(rows.rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(rows.row(2).squaredNorm() / 6 - 1.0) < 1e-3);
    CHECK(gradient_check([&](const VarD& a) { return probe(layer_norm_last(a, gain, shift)); }, x0) < kTol);
    CHECK(parameter_gradient_check([&] { return probe(layer_norm_last(VarD::constant(x0), gain, shift)); }, gain) <
          kTol);
    CHECK(parameter_gradient_check([&] { return probe(layer_norm_last(VarD::constant(x0), gain, shift)); }, shift) <
          kTol);
  }
}

TEST_CASE("backward handles shared subgraphs and leaves accumulate") {
  const auto x = VarD::parameter(random_tensor({1, 1, 2, 2}, 28));
  const auto y = mul(x, x);
  const auto loss = sum(add(y, y));  // d/dx = 4x
  backward(loss);
  CHECK((x.grad().data() - 4 * x.value().data()).cwiseAbs().maxCoeff() < 1e-12);
  backward(sum(x));
  CHECK((x.grad().data() - (4 * x.value().data().array() + 1).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());

  const auto c = VarD::constant(random_tensor({1, 1, 2, 2}, 29));
  CHECK_FALSE(mul(c, c).requires_grad());
}
