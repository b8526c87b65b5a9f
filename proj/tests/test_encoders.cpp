#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vidqa/encoders.hpp"
#include "vidqa/errors.hpp"
#include "vidqa/grad_check.hpp"

using namespace vidqa;

namespace {

VideoTensor random_video(std::size_t c, std::size_t f, std::size_t h, std::size_t w,
                         std::uint64_t seed) {
  VideoTensor v = VideoTensor::zeros(c, f, h, w);
  RngStream rng(seed);
  for (double& x : v.data) x = rng.uniform();
  return v;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.value()[i] - b.value()[i]));
  return m;
}

VideoTensor permute_frames(const VideoTensor& v, const std::vector<std::size_t>& order) {
  VideoTensor out = VideoTensor::zeros(v.channels, v.frames, v.height, v.width);
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t f = 0; f < v.frames; ++f)
      for (std::size_t y = 0; y < v.height; ++y)
        for (std::size_t x = 0; x < v.width; ++x)
          out.at(c, f, y, x) = v.at(c, order[f], y, x);
  return out;
}

}  // namespace

TEST_CASE("parameter registry is name-keyed and order independent") {
  RngStream master(77);
  ParamMap a, b;
  Tensor w1 = a.create("m.w", {3, 4}, 0.02, master);
  Tensor w2 = a.create("m.v", {2, 2}, 0.02, master);
  // Same names, opposite creation order, same master seed.
  Tensor w2b = b.create("m.v", {2, 2}, 0.02, master);
  Tensor w1b = b.create("m.w", {3, 4}, 0.02, master);
  CHECK(w1.value() == w1b.value());
  CHECK(w2.value() == w2b.value());
  CHECK(a.scalar_count() == 16);
  CHECK(a.at("m.w").id() == w1.id());
  CHECK(a.items()[0].first == "m.w");
  CHECK_THROWS_AS(a.create("m.w", {1}, 0.02, master), StateError);
  CHECK_THROWS_AS(a.at("missing"), StateError);

  Tensor g = a.create_full("m.gain", {4}, 1.0);
  for (double x : g.value()) CHECK(x == 1.0);
  CHECK(g.requires_grad());
}

TEST_CASE("attention rows are convex combinations of values") {
  RngStream master(5);
  ParamMap params;
  Tensor q = Tensor::leaf({1, 4}, {0.3, -0.2, 0.5, 0.1});
  Tensor k = Tensor::leaf({1, 4}, {1.0, 2.0, -1.0, 0.0});
  Tensor v = Tensor::leaf({1, 4}, {7.0, -3.0, 2.0, 0.5});
  // One query, one key: the softmax weight is 1 and the output is the value.
  Tensor out = attend_heads(q, k, v, 2);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(out.value()[i] == doctest::Approx(v.value()[i]).epsilon(1e-12));

  RngStream data(8);
  Tensor q3 = Tensor::leaf({3, 4}, {0, 0, 0, 0, 1, 1, 1, 1, -1, 0, 1, 0});
  std::vector<double> vv(20);
  for (double& x : vv) x = data.normal();
  Tensor k5 = Tensor::leaf({5, 4}, std::vector<double>(vv.begin(), vv.begin() + 20));
  std::vector<double> vv2(20);
  for (double& x : vv2) x = data.normal();
  Tensor v5 = Tensor::leaf({5, 4}, vv2);
  Tensor o3 = attend_heads(q3, k5, v5, 2);
  REQUIRE(o3.rows() == 3);
  REQUIRE(o3.cols() == 4);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t j = 0; j < 5; ++j) {
        lo = std::min(lo, v5.at(j, c));
        hi = std::max(hi, v5.at(j, c));
      }
      CHECK(o3.at(r, c) >= lo - 1e-12);
      CHECK(o3.at(r, c) <= hi + 1e-12);
    }

  CHECK_THROWS_AS(attend_heads(q3, k5, v5, 3), ConfigError);
  (void)params;
  (void)master;
}

TEST_CASE("video encoder produces one summary plus one token per patch") {
  VideoEncoderConfig cfg;
  cfg.patch = 8;
  RngStream master(11);
  ParamMap params;
  VideoEncoder enc(params, "venc", cfg, master);

  VideoTensor v = random_video(3, 4, 16, 16, 1);
  Tensor pm = VideoEncoder::patch_matrix(v, 8);
  REQUIRE(pm.rows() == 16);  // 4 frames x 4 patches
  REQUIRE(pm.cols() == 192);  // 3 channels x 8 x 8
  // Row for frame 2, patch (1,0); column for channel 1, y=3, x=5.
  CHECK(pm.at(2 * 4 + 2, 64 + 3 * 8 + 5) == v.at(1, 2, 8 + 3, 5));
  CHECK_FALSE(pm.requires_grad());

  ForwardCtx ctx;
  VideoTokens out = enc.forward(v, ctx);
  REQUIRE(out.seq.rows() == 17);
  REQUIRE(out.seq.cols() == 32);
  CHECK(out.frames == 4);
  CHECK(out.patches == 4);
  CHECK(all_finite(out.seq));

  VideoTokens again = enc.forward(v, ctx);
  CHECK(out.seq.value() == again.seq.value());

  VideoTensor zero = VideoTensor::zeros(3, 4, 16, 16);
  CHECK(all_finite(enc.forward(zero, ctx).seq));

  CHECK_THROWS_AS(enc.forward(random_video(1, 4, 16, 16, 2), ctx), ShapeError);
  CHECK_THROWS_AS(enc.forward(random_video(3, 4, 12, 16, 2), ctx), ShapeError);
  CHECK_THROWS_AS(enc.forward(random_video(3, 9, 16, 16, 2), ctx), ShapeError);
  VideoEncoderConfig bad = cfg;
  bad.heads = 5;
  ParamMap p2;
  CHECK_THROWS_AS(VideoEncoder(p2, "venc", bad, master), ConfigError);
}

TEST_CASE("video encoder reacts to frame order and patch content") {
  VideoEncoderConfig cfg;
  cfg.patch = 8;
  RngStream master(23);
  ParamMap params;
  VideoEncoder enc(params, "venc", cfg, master);
  ForwardCtx ctx;

  VideoTensor v = random_video(3, 4, 16, 16, 3);
  Tensor base = enc.forward(v, ctx).seq;

  VideoTensor rev = permute_frames(v, {3, 2, 1, 0});
  Tensor out_rev = enc.forward(rev, ctx).seq;
  CHECK(max_abs_diff(base, out_rev) > 1e-3);

  VideoTensor bumped = v;
  bumped.at(0, 1, 4, 4) += 0.5;
  CHECK(max_abs_diff(base, enc.forward(bumped, ctx).seq) > 1e-6);

  // A single frame is a valid clip.
  VideoTensor single = random_video(3, 1, 16, 16, 4);
  Tensor s = enc.forward(single, ctx).seq;
  REQUIRE(s.rows() == 5);
  CHECK(all_finite(s));
}

TEST_CASE("text encoder embeds, summarizes and validates input") {
  TextEncoderConfig cfg;
  cfg.vocab_size = 20;
  RngStream master(31);
  ParamMap params;
  TextEncoder enc(params, "tenc", cfg, master);
  ForwardCtx ctx;

  std::vector<int> ids{0, 7, 12, 3};
  Tensor out = enc.forward(ids, ctx);
  REQUIRE(out.rows() == 4);
  REQUIRE(out.cols() == 32);
  CHECK(all_finite(out));
  CHECK(out.value() == enc.forward(ids, ctx).value());

  Tensor swapped = enc.forward({0, 12, 7, 3}, ctx);
  CHECK(max_abs_diff(out, swapped) > 1e-3);
  Tensor other = enc.forward({0, 7, 12, 4}, ctx);
  CHECK(max_abs_diff(out, other) > 1e-3);

  CHECK_THROWS_AS(enc.forward({}, ctx), ShapeError);
  CHECK_THROWS_AS(enc.forward({0, 25}, ctx), DataError);
  CHECK_THROWS_AS(enc.forward({-1}, ctx), DataError);
  CHECK_THROWS_AS(enc.forward(std::vector<int>(33, 1), ctx), ShapeError);

  TextEncoderConfig bad = cfg;
  bad.vocab_size = 0;
  ParamMap p2;
  CHECK_THROWS_AS(TextEncoder(p2, "tenc", bad, master), ConfigError);
}

TEST_CASE("dropout only fires on training passes") {
  TextEncoderConfig cfg;
  cfg.vocab_size = 10;
  cfg.dropout = 0.5;
  RngStream master(41);
  ParamMap params;
  TextEncoder enc(params, "tenc", cfg, master);

  std::vector<int> ids{0, 3, 5};
  ForwardCtx eval_ctx;
  Tensor a = enc.forward(ids, eval_ctx);
  Tensor b = enc.forward(ids, eval_ctx);
  CHECK(a.value() == b.value());

  RngStream drop_rng(1);
  ForwardCtx train_ctx{true, &drop_rng};
  Tensor c = enc.forward(ids, train_ctx);
  CHECK(max_abs_diff(a, c) > 1e-6);

  ForwardCtx broken{true, nullptr};
  CHECK_THROWS_AS(enc.forward(ids, broken), StateError);
}

TEST_CASE("similarity matrix matches a hand-rolled cosine oracle") {
  Tensor v = Tensor::leaf({2, 3}, {1.0, 0.0, 2.0, -1.0, 0.5, 0.25});
  Tensor t = Tensor::leaf({3, 3}, {0.5, 0.5, 0.5, 2.0, 0.0, 4.0, 0.0, -1.0, 0.0});
  Tensor s = similarity_matrix(v, t, true);
  REQUIRE(s.rows() == 2);
  REQUIRE(s.cols() == 3);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0, nv = 0.0, nt = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        dot += v.at(i, k) * t.at(j, k);
        nv += v.at(i, k) * v.at(i, k);
        nt += t.at(j, k) * t.at(j, k);
      }
      double want = dot / (std::sqrt(nv) * std::sqrt(nt));
      CHECK(s.at(i, j) == doctest::Approx(want).epsilon(1e-12));
      CHECK(s.at(i, j) >= -1.0 - 1e-12);
      CHECK(s.at(i, j) <= 1.0 + 1e-12);
    }

  // Cosine is scale invariant; raw dot products are not.
  Tensor v3 = Tensor::leaf({2, 3}, {3.0, 0.0, 6.0, -3.0, 1.5, 0.75});
  Tensor s3 = similarity_matrix(v3, t, true);
  CHECK(max_abs_diff(s, s3) < 1e-12);
  Tensor raw = similarity_matrix(v, t, false);
  Tensor raw3 = similarity_matrix(v3, t, false);
  CHECK(max_abs_diff(raw, raw3) > 1.0);

  // Row 0 of the identity against itself scores 1 on the diagonal.
  Tensor e = Tensor::leaf({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor se = similarity_matrix(e, e, true);
  CHECK(se.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(se.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("projection head scales similarities by a learned temperature") {
  RngStream master(51);
  ParamMap params;
  ProjectionHead head = ProjectionHead::make(params, "proj", 8, 6, master);
  CHECK(head.tau() == doctest::Approx(0.07).epsilon(1e-12));
  Tensor inv = head.inv_tau();
  CHECK(inv.item() == doctest::Approx(1.0 / 0.07).epsilon(1e-12));

  Tensor cls = Tensor::leaf({2, 8}, std::vector<double>(16, 0.25));
  CHECK(head.project_video(cls).cols() == 6);
  CHECK(head.project_text(cls).cols() == 6);
  CHECK(params.has("proj.log_tau"));
}

TEST_CASE("gradients flow end to end through both encoders") {
  VideoEncoderConfig vcfg;
  vcfg.layers = 1;
  vcfg.dim = 8;
  vcfg.heads = 2;
  vcfg.patch = 4;
  vcfg.max_frames = 2;
  vcfg.max_patches = 4;
  TextEncoderConfig tcfg;
  tcfg.layers = 1;
  tcfg.dim = 8;
  tcfg.heads = 2;
  tcfg.max_seq_len = 8;
  tcfg.vocab_size = 12;

  RngStream master(61);
  ParamMap params;
  VideoEncoder venc(params, "v", vcfg, master);
  TextEncoder tenc(params, "t", tcfg, master);
  ProjectionHead head = ProjectionHead::make(params, "p", 8, 6, master);

  VideoTensor video = random_video(3, 2, 8, 8, 9);
  std::vector<int> ids{0, 4, 7};

  // Text side through projection and temperature, the tightest pinned path.
  auto text_loss = [&](const std::vector<Tensor>&) {
    ForwardCtx ctx;
    Tensor tseq = tenc.forward(ids, ctx);
    Tensor tcls = slice_rows(tseq, 0, 1);
    Tensor e = l2_normalize_rows(head.project_text(tcls));
    Tensor anchor = l2_normalize_rows(head.project_video(slice_rows(tseq, 1, 2)));
    Tensor s = scale_by(matmul(e, transpose(anchor)), head.inv_tau());
    return add(sum(s), mean(tseq));
  };
  std::vector<Tensor> text_params{
      params.at("t.tok_emb"),          params.at("t.pos_emb"),
      params.at("t.block0.attn.v.w"),  params.at("t.block0.attn.q.w"),
      params.at("t.block0.ffn.expand.w"), params.at("t.final_ln.bias"),
      params.at("t.block0.ln1.gain"),  params.at("p.text.w"),
      params.at("p.text.b"),           params.at("p.log_tau")};
  for (const Tensor& p : text_params) {
    double err = grad_check(text_loss, {p}, 1e-5);
    CAPTURE(err);
    CHECK(err < 1e-5);
  }

  // Full dual path including the video tower; composed-network tolerance.
  auto full_loss = [&](const std::vector<Tensor>&) {
    ForwardCtx ctx;
    Tensor vseq = venc.forward(video, ctx).seq;
    Tensor tseq = tenc.forward(ids, ctx);
    Tensor vcls = slice_rows(vseq, 0, 1);
    Tensor tcls = slice_rows(tseq, 0, 1);
    Tensor s = similarity_matrix(head.project_video(vcls), head.project_text(tcls),
                                 true);
    Tensor scaled = scale_by(s, head.inv_tau());
    // The raw temperature term keeps d/d log_tau well conditioned even when
    // the two random embeddings land nearly orthogonal.
    return add(add(add(sum(scaled), mean(vseq)), mean(tseq)),
               scale(head.inv_tau(), 0.1));
  };
  std::vector<Tensor> full_params{
      params.at("v.patch_proj.w"), params.at("v.cls"),
      params.at("v.block0.temporal.q.w"), params.at("v.block0.spatial.o.w"),
      params.at("v.block0.ffn.expand.w"), params.at("v.block0.ln_s.gain"),
      params.at("v.spatial_pos"), params.at("v.temporal_pos"),
      params.at("t.tok_emb"), params.at("p.video.w"), params.at("p.log_tau")};
  // Epsilon 1e-4: through the deep video tower the 1e-5 step leaves the
  // difference quotient dominated by float64 cancellation on coordinates
  // whose true gradient is ~1e-8.
  for (std::size_t i = 0; i < full_params.size(); ++i) {
    double err = grad_check(full_loss, {full_params[i]}, 1e-4);
    CAPTURE(i);
    CAPTURE(err);
    CHECK(err < 1e-4);
  }
}
