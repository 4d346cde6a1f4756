#include "pansharp/config.hpp"
#include "testing.hpp"

using namespace pansharp;

TEST_CASE("full-scale profile defaults") {
  const auto c = RunConfig::parse("");
  CHECK(c.profile == "paper");
  CHECK(c.stages == 4);
  CHECK(c.lr == doctest::Approx(5e-4));
  CHECK(c.batch == 4);
  CHECK(c.epochs == 1000);
  CHECK(c.decay_epoch == 200);
  CHECK(c.decay_factor == doctest::Approx(0.5));
  CHECK(c.lambda == 1.0);
  CHECK(c.cmae_mask_ratio == doctest::Approx(0.75));
  CHECK(c.tmae_mask_ratio == doctest::Approx(0.75));
}

TEST_CASE("desk profile caps the step budget and keeps K = 4") {
  const auto c = RunConfig::parse("profile = desk\n");
  CHECK(c.profile == "desk");
  CHECK(c.stages == 4);
  CHECK(c.batch == 4);
  CHECK(c.max_steps > 0);
  CHECK(c.max_steps <= 500);
  CHECK_THROWS_AS(RunConfig::parse("profile = cluster\n"), ConfigError);
}

TEST_CASE("comments, whitespace and overrides") {
  const auto c = RunConfig::parse("# run\n  stages = 2   # fewer\n\nlambda=0\nprofile = desk\n");
  CHECK(c.stages == 2);
  CHECK(c.lambda == 0.0);
  CHECK(c.features == RunConfig::preset("desk").features);
}

TEST_CASE("unknown, repeated and malformed keys are rejected") {
  CHECK_THROWS_AS(RunConfig::parse("stagez = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("stages = 3\nstages = 2\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("stages 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("stages = three\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("disable_mae_loss = maybe\n"), ConfigError);
  RunConfig c;
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
}

TEST_CASE("validation rejects out-of-range values") {
  for (const char* text : {"cmae_mask_ratio = 0\n", "tmae_mask_ratio = 1.5\n", "stages = 7\n", "optimizer = sgd\n",
                           "batch = 0\n", "lr = -1\n", "ratio = 1\n"}) {
    CAPTURE(text);
    CHECK_THROWS_AS(RunConfig::parse(text).validate(), ConfigError);
  }
  CHECK_NOTHROW(RunConfig::parse("stages = 0\n").validate());
  CHECK_NOTHROW(RunConfig::parse("cmae_mask_ratio = 1\n").validate());
}

TEST_CASE("canonical text round-trips and the hash ignores data paths") {
  auto a = RunConfig::parse("profile = desk\nseed = 7\ntrain_data = /a\ntest_data = /b\n");
  const auto b = RunConfig::parse(a.canonical());
  CHECK(b.canonical() == a.canonical());
  CHECK(b.hash() == a.hash());

  auto moved = a;
  moved.train_data = "/elsewhere";
  moved.test_data = "/other";
  CHECK(moved.hash() == a.hash());

  auto reseeded = a;
  reseeded.set("seed", "8");
  CHECK(reseeded.hash() != a.hash());
  CHECK(a.hash().size() == 64);
}

TEST_CASE("every key appears once in the canonical text") {
  const auto text = RunConfig().canonical();
  for (const auto& k : RunConfig::keys()) {
    CAPTURE(k);
    const auto needle = "\n" + k + "=";
    const auto first = ("\n" + text).find(needle);
    REQUIRE(first != std::string::npos);
    CHECK(("\n" + text).find(needle, first + 1) == std::string::npos);
  }
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("schedule halves the rate after the decay epoch") {
  const auto s = RunConfig().schedule();
  CHECK(s.lr_at_epoch(1) == doctest::Approx(5e-4));
  CHECK(s.lr_at_epoch(200) == doctest::Approx(5e-4));
  CHECK(s.lr_at_epoch(201) == doctest::Approx(2.5e-4));
}

TEST_CASE("derived component configs carry the run settings") {
  const auto c = RunConfig::parse("profile = desk\nstages = 3\n");
  CHECK(c.unfolding().stages == 3);
  CHECK(c.unfolding().features == c.features);
  CHECK(c.token_mae().patch == c.tmae_patch);
  CHECK(c.conv_mae().features == c.features);
  CHECK(c.unfolding().seed != c.token_mae().seed);
}
