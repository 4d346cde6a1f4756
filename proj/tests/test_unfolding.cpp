#include "pansharp/unfolding.hpp"
#include "testing.hpp"

using namespace pansharp;
using testing::random_image;
using testing::random_tensor;

namespace {

using VarD = Var<double>;
using TensorD = Tensor<double>;

UnfoldingConfig tiny_config(int channels = 2, int ratio = 2, int stages = 2, int features = 4) {
  UnfoldingConfig cfg;
  cfg.channels = channels;
  cfg.ratio = ratio;
  cfg.stages = stages;
  cfg.features = features;
  cfg.encoder_blocks = 2;
  cfg.seed = 21;
  return cfg;
}

void randomize(const ParamList<double>& params, std::uint64_t seed, double scale = 0.3) {
  for (const auto& p : params) {
    auto t = random_tensor(p.var.shape(), seed++);
    t.data() *= scale;
    p.var.mutable_value() = t;
  }
}

template <typename Scalar>
void zero_step(StageParams<Scalar>& sp) {
  sp.raw_delta.mutable_value().data().setConstant(std::numeric_limits<Scalar>::lowest());
}

double data_term(const FixedDegradeOracle<double>& op, const TensorD& h, const TensorD& l) {
  return 0.5 * (op.apply(h).data() - l.data()).squaredNorm();
}

}  // namespace

TEST_CASE("stage parameters stay positive") {
  StageParams<float> sp(0.1, 0.1);
  CHECK(sp.delta_value() == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(sp.eta_value() == doctest::Approx(0.1).epsilon(1e-5));

  // Gradient pressure that always pushes both values down.
  Adam<float> opt(sp.parameters());
  for (int step = 0; step < 2000; ++step) {
    opt.zero_grad();
    backward(add(sp.delta(), sp.eta()));
    opt.step(0.01);
    REQUIRE(sp.delta_value() > 0);
    REQUIRE(sp.eta_value() > 0);
  }
  CHECK(sp.delta_value() < 0.01f);

  zero_step(sp);
  CHECK(sp.delta_value() == 0.0f);
}

TEST_CASE("learning rate schedule") {
  const StepSchedule s;
  CHECK(s.lr_at_epoch(1) == 5e-4);
  CHECK(s.lr_at_epoch(200) == 5e-4);
  CHECK(s.lr_at_epoch(201) == 0.5 * 5e-4);
  CHECK(s.lr_at_epoch(1000) == 0.5 * 5e-4);
}

TEST_CASE("PAN shallow features") {
  UnfoldingConfig cfg;
  cfg.features = 32;
  const UnfoldingModel<float> model(cfg);
  const auto f = model.pan_shallow_features(Var<float>::constant(Tensor<float>(Shape{1, 1, 128, 128})));
  CHECK(f.shape() == Shape{1, 32, 128, 128});
  CHECK(f.value().data().isZero());
  CHECK_THROWS_AS(model.pan_shallow_features(Var<float>::constant(Tensor<float>(Shape{1, 2, 8, 8}))), GeometryError);

  const UnfoldingModel<double> dm(tiny_config());
  const auto w = VarD::constant(random_tensor({1, 4, 8, 8}, 1));
  CHECK(testing::gradient_check([&](const VarD& p) { return sum(mul(dm.pan_shallow_features(p), w)); },
                                random_tensor({1, 1, 8, 8}, 2, 0, 1)) < 1e-3);
}

TEST_CASE("SFT block") {
  Rng rng(4);
  SUBCASE("shape and PAN independence at initialization") {
    const SFTBlock<float> sft(32, rng);
    const auto x = Var<float>::constant(random_tensor<float>({1, 32, 16, 16}, 1));
    const auto a = sft(x, Var<float>::constant(random_tensor<float>({1, 32, 16, 16}, 2)));
    const auto b = sft(x, Var<float>::constant(random_tensor<float>({1, 32, 16, 16}, 3)));
    CHECK(a.shape() == Shape{1, 32, 16, 16});
    CHECK(a.value() == b.value());
    CHECK_THROWS_AS(sft(x, Var<float>::constant(Tensor<float>(Shape{1, 32, 8, 16}))), GeometryError);
  }
  SUBCASE("Fourier round trip with an identity update") {
    SFTBlock<double> sft(3, rng);
    sft.freq2.zero_init();
    const auto x0 = random_tensor({2, 3, 8, 6}, 5);
    const auto out = sft.frequency_branch(VarD::constant(x0)).value();
    CHECK((out.data() - x0.data()).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("gradients in both inputs once the modulation is active") {
    SFTBlock<double> sft(2, rng);
    randomize(sft.gamma.parameters(), 10);
    randomize(sft.beta.parameters(), 20);
    const auto w = VarD::constant(random_tensor({1, 2, 8, 8}, 6));
    const auto fp = VarD::constant(random_tensor({1, 2, 8, 8}, 7));
    const auto x = VarD::constant(random_tensor({1, 2, 8, 8}, 8));
    CHECK(testing::gradient_check([&](const VarD& a) { return sum(mul(sft(a, fp), w)); }, x.value(), 1e-6) < 1e-3);
    CHECK(testing::gradient_check([&](const VarD& p) { return sum(mul(sft(x, p), w)); }, fp.value(), 1e-6) < 1e-3);
  }
}

TEST_CASE("proximal stage") {
  const UnfoldingModel<double> model(tiny_config(2, 2, 2, 4));
  const auto h = VarD::constant(random_tensor({1, 2, 8, 8}, 1, 0, 1));
  const auto fp = model.pan_shallow_features(VarD::constant(random_tensor({1, 1, 8, 8}, 2, 0, 1)));
  const auto u = model.unet_prox(h, fp, 0);
  CHECK(u.shape() == h.shape());
  CHECK(u.value() == h.value());

  SUBCASE("end-to-end gradient") {
    UnfoldingModel<double> active(tiny_config(2, 2, 2, 4));
    randomize(active.stage_nets[0].out2.parameters(), 30);
    const auto w = VarD::constant(random_tensor({1, 2, 8, 8}, 3));
    const auto pan = VarD::constant(random_tensor({1, 1, 8, 8}, 4, 0, 1));
    CHECK(testing::gradient_check(
              [&](const VarD& x) { return sum(mul(active.unet_prox(x, active.pan_shallow_features(pan), 0), w)); },
              h.value()) < 1e-3);
  }
}

TEST_CASE("HNet update") {
  const auto oracle = FixedDegradeOracle<double>::for_ratio(2);
  const auto down = [&](const VarD& x) { return oracle.down(x); };
  const auto up = [&](const VarD& x) { return oracle.up(x); };
  const auto scalar = [](double v) { return VarD::constant(TensorD::scalar(v)); };

  SUBCASE("fixed point is exact") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto h = VarD::constant(random_tensor({1, 2, 8, 8}, s, 0, 1));
      const auto l = VarD::constant(oracle.apply(h.value()));
      CHECK(hnet_update<double>(h, h, l, down, up, scalar(0.37), scalar(0.2)).value() == h.value());
    }
  }
  SUBCASE("zero step leaves H unchanged") {
    const auto h = VarD::constant(random_tensor({1, 2, 8, 8}, 1));
    const auto u = VarD::constant(random_tensor({1, 2, 8, 8}, 2));
    const auto l = VarD::constant(random_tensor({1, 2, 4, 4}, 3));
    CHECK(hnet_update<double>(h, u, l, down, up, scalar(0.0), scalar(0.2)).value() == h.value());
  }
  SUBCASE("update direction is the gradient of the quadratic objective") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      for (int r : {2, 4}) {
        const auto op = FixedDegradeOracle<double>::for_ratio(r);
        const auto h0 = random_tensor({1, 2, 8, 8}, 100 + s);
        const auto u0 = random_tensor({1, 2, 8, 8}, 200 + s);
        const auto l0 = random_tensor({1, 2, 8 / r, 8 / r}, 300 + s);
        const double eta = 0.05 + 0.01 * static_cast<double>(s);
        const auto step = hnet_update<double>(
            VarD::constant(h0), VarD::constant(u0), VarD::constant(l0), [&](const VarD& x) { return op.down(x); },
            [&](const VarD& x) { return op.up(x); }, scalar(1.0), scalar(eta));
        const Eigen::VectorXd analytic = h0.data() - step.value().data();

        auto objective = [&](const TensorD& h) {
          return data_term(op, h, l0) + 0.5 * eta * (u0.data() - h.data()).squaredNorm();
        };
        Eigen::VectorXd numeric(h0.size());
        for (Eigen::Index i = 0; i < h0.size(); ++i) {
          TensorD hp = h0, hm = h0;
          hp.data()[i] += 1e-5;
          hm.data()[i] -= 1e-5;
          numeric[i] = (objective(hp) - objective(hm)) / 2e-5;
        }
        CHECK((analytic - numeric).norm() / numeric.norm() < 1e-3);
      }
    }
  }
  SUBCASE("identity prox descends the data term") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      auto h = VarD::constant(random_tensor({1, 2, 16, 16}, 400 + s, 0, 1));
      const auto l = VarD::constant(random_tensor({1, 2, 8, 8}, 500 + s, 0, 1));
      double prev = data_term(oracle, h.value(), l.value());
      for (int it = 0; it < 10; ++it) {
        h = hnet_update<double>(h, h, l, down, up, scalar(0.1), scalar(0.1));
        const double cur = data_term(oracle, h.value(), l.value());
        CHECK(cur < prev);
        prev = cur;
      }
    }
  }
  SUBCASE("geometry errors") {
    const auto h = VarD::constant(TensorD({1, 2, 8, 8}));
    CHECK_THROWS_AS(hnet_update<double>(h, VarD::constant(TensorD({1, 2, 8, 6})), VarD::constant(TensorD({1, 2, 4, 4})),
                                        down, up, scalar(0.1), scalar(0.1)),
                    GeometryError);
    CHECK_THROWS_AS(hnet_update<double>(h, h, VarD::constant(TensorD({1, 2, 2, 2})), down, up, scalar(0.1), scalar(0.1)),
                    GeometryError);
  }
}

TEST_CASE("unfolding forward") {
  SUBCASE("reference geometry") {
    UnfoldingConfig cfg;
    cfg.features = 8;
    const UnfoldingModel<float> model(cfg);
    const auto lrms = to_tensor(random_image(32, 32, 4, 1));
    const auto pan = to_tensor(random_image(128, 128, 1, 2));
    CHECK(model.forward(lrms, pan).shape() == Shape{1, 4, 128, 128});
    CHECK_THROWS_AS(model.forward(lrms, to_tensor(random_image(64, 64, 1, 2))), GeometryError);
    CHECK_THROWS_AS(model.forward(to_tensor(random_image(32, 32, 3, 1)), pan), GeometryError);
  }
  SUBCASE("K = 0 is bicubic upsampling") {
    UnfoldingConfig cfg = tiny_config(4, 4, 0, 4);
    const UnfoldingModel<float> model(cfg);
    const auto lrms = random_image(8, 8, 4, 3);
    const auto out = model.forward(to_tensor(lrms), to_tensor(random_image(32, 32, 1, 4))).value();
    CHECK(to_image(out) == bicubic_upsample(lrms, 4));
  }
  SUBCASE("zero decoders and zero steps reproduce bicubic") {
    UnfoldingModel<float> model(tiny_config(4, 4, 3, 4));
    for (auto& sp : model.stage_params) zero_step(sp);
    const auto lrms = random_image(8, 8, 4, 5);
    const auto out = model.forward(to_tensor(lrms), to_tensor(random_image(32, 32, 1, 6))).value();
    CHECK(to_image(out) == bicubic_upsample(lrms, 4));
  }
  SUBCASE("property: output shape equals ground-truth shape") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 6; ++trial) {
      const int m = 32 + 4 * static_cast<int>(rng() % 25), n = 32 + 4 * static_cast<int>(rng() % 25);
      const int c = std::array<int, 3>{2, 4, 8}[rng() % 3];
      const UnfoldingModel<float> model(tiny_config(c, 4, 2, 4));
      const auto out = model.forward(to_tensor(random_image(m / 4, n / 4, c, rng())), to_tensor(random_image(m, n, 1, rng())));
      CHECK(out.shape() == Shape{1, c, m, n});
    }
  }
  SUBCASE("predict clips to the unit range") {
    UnfoldingModel<float> model(tiny_config(2, 2, 1, 4));
    model.stage_params[0].raw_delta.mutable_value().data().setConstant(5.0f);
    const auto out = model.predict(to_tensor(random_image(4, 4, 2, 1)), to_tensor(random_image(8, 8, 1, 2)));
    CHECK(out.data().minCoeff() >= 0.0f);
    CHECK(out.data().maxCoeff() <= 1.0f);
  }
}

TEST_CASE("composite loss") {
  TokenMAEConfig tcfg;
  tcfg.channels = 2;
  tcfg.patch = 4;
  tcfg.band_group = 1;
  tcfg.dim = 8;
  tcfg.heads = 2;
  tcfg.encoder_layers = 1;
  tcfg.decoder_layers = 1;
  const TokenMAE<double> emae(tcfg);
  set_trainable(emae.parameters(), false);
  const auto gt = random_tensor({2, 2, 8, 8}, 1, 0.2, 0.8);

  const auto same = composite_loss(VarD::constant(gt), gt, &emae, 1.0);
  CHECK(same.total.item() == 0.0);
  CHECK(same.image.item() == 0.0);
  CHECK(same.consistency.item() == 0.0);

  const auto pred = VarD::constant(random_tensor({2, 2, 8, 8}, 2, 0.2, 0.8));
  const auto full = composite_loss(pred, gt, &emae, 1.0);
  CHECK(full.consistency.item() > 0);
  CHECK(full.total.item() == doctest::Approx(full.image.item() + full.consistency.item()).epsilon(1e-12));
  CHECK(composite_loss(pred, gt, &emae, 0.0).total.item() == full.image.item());
  CHECK(composite_loss(pred, gt, nullptr, 1.0).total.item() == full.image.item());

  TensorD shifted = gt;
  shifted.data().array() += 0.1;
  CHECK(composite_loss(VarD::constant(shifted), gt, nullptr, 1.0).image.item() == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(composite_loss(pred, random_tensor({2, 2, 8, 4}, 3), nullptr, 1.0), GeometryError);
}

TEST_CASE("training steps") {
  ToyDatasetSpec spec;
  spec.scenes = 4;
  spec.seed = 5;
  const auto pairs = make_toy_pairs(spec);
  REQUIRE(pairs.size() == 16);
  UnfoldingConfig cfg;
  cfg.features = 8;
  cfg.encoder_blocks = 2;
  cfg.seed = 9;

  auto run = [&](int steps) {
    UnfoldingModel<float> model(cfg);
    Adam<float> opt(model.parameters());
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) {
      std::vector<std::size_t> idx;
      for (int i = 0; i < 4; ++i) idx.push_back(static_cast<std::size_t>((4 * s + i) % 16));
      losses.push_back(train_step<float>(model, opt, make_batch<float>(pairs, idx), nullptr, 0.0, 5e-4).total);
    }
    std::vector<Tensor<float>> params;
    for (const auto& p : model.parameters()) params.push_back(p.var.value());
    return std::pair{losses, params};
  };

  SUBCASE("identical seeds give identical parameters") {
    const auto [la, pa] = run(10);
    const auto [lb, pb] = run(10);
    CHECK(la == lb);
    CHECK(pa == pb);
  }
  SUBCASE("smoothed loss falls over a short run") {
    const auto [losses, params] = run(300);
    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) {
      head += losses[static_cast<std::size_t>(i)];
      tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    MESSAGE("unfolding loss " << head / 20 << " -> " << tail / 20);
    CHECK(tail < head);
  }
  SUBCASE("non-finite loss raises a divergence error with diagnostics") {
    UnfoldingModel<float> model(cfg);
    Adam<float> opt(model.parameters());
    auto batch = make_batch<float>(pairs, {0, 1});
    batch.gt.data()[3] = std::numeric_limits<float>::quiet_NaN();
    try {
      train_step<float>(model, opt, batch, nullptr, 0.0, 5e-4);
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.diagnostics().find("\"reason\":\"loss\"") != std::string::npos);
      CHECK(e.diagnostics().find("hnet0.raw_delta") != std::string::npos);
    }
    CHECK_THROWS_AS(make_batch<float>(pairs, {}), ArgumentError);
  }
}
