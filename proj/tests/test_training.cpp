#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "thpn/commands.hpp"
#include "thpn/metrics.hpp"
#include "thpn/synth.hpp"
#include "thpn/training.hpp"

using namespace thpn;

namespace {

struct TargetFixture {
  Vocabulary vocab;
  EncodedContext ctx;
  RetrievedAnswers retrieved;

  TargetFixture() {
    Dialogue d;
    d.turns.push_back({tokenize("find ent_a and ent_a please"), tokenize("sure thing")});
    d.kb.push_back({"ent_a", "r_kind", "ent_b"});
    Dialogue extra;
    extra.turns.push_back({tokenize("pattern words here ent_b"), tokenize("ok")});
    vocab = build_vocab({d, extra});
    ctx = build_context(history_through_user_turn(d, 0), d.kb);
    std::vector<ScoredAnswer> answers = {{tokenize("pattern words here ent_b"), 0.8, 0}};
    retrieved = mask_and_flatten(answers, d.kb, {});
  }
};

Hyperparams small_hp() {
  Hyperparams hp;
  hp.dim = 16;
  hp.epochs = 1;
  hp.seed = 7;
  hp.theta = 0.5;
  return hp;
}

}  // namespace

TEST_CASE("build_targets sentinel and last-occurrence rules") {
  TargetFixture fx;
  const int n = static_cast<int>(fx.ctx.items.size());
  const int m = static_cast<int>(fx.retrieved.flat_items.size());

  // token absent everywhere: both pointers get the sentinel
  auto t1 = build_targets({"nowhere_token"}, fx.ctx, fx.retrieved, fx.vocab, true, true);
  CHECK(t1.history_t[0] == n - 1);
  CHECK(t1.retrieved_t[0] == m - 1);
  CHECK(t1.vocab_t[0] == Vocabulary::kUnk);

  // ent_a appears twice in history (positions 1 and 3): last occurrence wins
  auto t2 = build_targets({"ent_a"}, fx.ctx, fx.retrieved, fx.vocab, true, true);
  CHECK(fx.ctx.items[t2.history_t[0]].emit_token == "ent_a");
  CHECK(t2.history_t[0] == 3);

  // NEW history token with masking on -> sentinel; with masking off -> position
  auto t3 = build_targets({"find"}, fx.ctx, fx.retrieved, fx.vocab, true, true);
  CHECK(t3.history_t[0] == n - 1);
  auto t4 = build_targets({"find"}, fx.ctx, fx.retrieved, fx.vocab, false, true);
  CHECK(t4.history_t[0] == 0);

  // retrieved entity with R_r on -> sentinel; off -> its position
  auto t5 = build_targets({"ent_b"}, fx.ctx, fx.retrieved, fx.vocab, true, true);
  CHECK(t5.retrieved_t[0] == m - 1);
  auto t6 = build_targets({"ent_b"}, fx.ctx, fx.retrieved, fx.vocab, true, false);
  CHECK(fx.retrieved.flat_items[t6.retrieved_t[0]].emit_token == "ent_b");

  // pattern word in the retrieved answer stays a pointer target under masking
  auto t7 = build_targets({"pattern"}, fx.ctx, fx.retrieved, fx.vocab, true, true);
  CHECK(t7.retrieved_t[0] == 0);

  // never a masked non-sentinel position
  for (const auto* t : {&t1, &t2, &t3, &t5, &t7}) {
    const int h = t->history_t[0];
    if (h != n - 1) CHECK(fx.ctx.r_h[h] == 1);
    const int r = t->retrieved_t[0];
    if (r != m - 1) CHECK(fx.retrieved.r_r[r] == 1);
  }
}

TEST_CASE("sequence_loss values") {
  Hyperparams hp;
  // point-mass distributions on the targets give exactly zero loss
  StepOutput s;
  s.p_v = Tensor::from_values({4}, {0, 0, 1, 0});
  s.p_h = Tensor::from_values({3}, {1, 0, 0});
  s.p_r = Tensor::from_values({2}, {0, 1});
  PointerTargets t;
  t.vocab_t = {2};
  t.history_t = {0};
  t.retrieved_t = {1};
  CHECK(sequence_loss({s}, t, hp).item() == doctest::Approx(0.0));

  // uniform vocabulary: the vocab term is ln V
  const int v = 7;
  StepOutput u;
  u.p_v = Tensor::from_values({v}, std::vector<double>(v, 1.0 / v));
  u.p_h = Tensor::from_values({1}, {1.0});
  u.p_r = Tensor::from_values({1}, {1.0});
  PointerTargets tu;
  tu.vocab_t = {3};
  tu.history_t = {0};
  tu.retrieved_t = {0};
  CHECK(sequence_loss({u}, tu, hp).item() == doctest::Approx(std::log(v)));

  // random small instance against a direct three-NLL sum
  RngState rng(3);
  std::vector<StepOutput> steps;
  PointerTargets tr;
  double expect = 0.0;
  for (int k = 0; k < 3; ++k) {
    auto mk = [&](int size) {
      std::vector<double> vals(size);
      double sum = 0;
      for (auto& x : vals) {
        x = rng.uniform() + 0.05;
        sum += x;
      }
      for (auto& x : vals) x /= sum;
      return vals;
    };
    auto pv = mk(5), ph = mk(4), pr = mk(3);
    StepOutput st;
    st.p_v = Tensor::from_values({5}, pv);
    st.p_h = Tensor::from_values({4}, ph);
    st.p_r = Tensor::from_values({3}, pr);
    steps.push_back(st);
    const int iv = static_cast<int>(rng.uniform_int(5));
    const int ih = static_cast<int>(rng.uniform_int(4));
    const int ir = static_cast<int>(rng.uniform_int(3));
    tr.vocab_t.push_back(iv);
    tr.history_t.push_back(ih);
    tr.retrieved_t.push_back(ir);
    expect += -std::log(pv[iv]) - std::log(ph[ih]) - std::log(pr[ir]);
  }
  expect /= 3.0;
  CHECK(std::abs(sequence_loss(steps, tr, hp).item() - expect) <= 1e-12);

  // no_ptr drops the two pointer terms
  Hyperparams hp_noptr;
  hp_noptr.no_ptr = true;
  double expect_v = 0.0;
  for (int k = 0; k < 3; ++k) expect_v += -std::log(steps[k].p_v.at(tr.vocab_t[k]));
  CHECK(sequence_loss(steps, tr, hp_noptr).item() == doctest::Approx(expect_v / 3.0));
}

TEST_CASE("hyperparams canonical text round trip") {
  Hyperparams hp = small_hp();
  hp.no_gate = true;
  hp.mask_retrieved_ew = false;
  hp.theta = 0.37;
  hp.method = "bm25";
  Hyperparams back = parse_hyperparams(serialize_hyperparams(hp));
  CHECK(serialize_hyperparams(back) == serialize_hyperparams(hp));
  CHECK(back.no_gate);
  CHECK(!back.mask_retrieved_ew);
  CHECK(back.theta == hp.theta);
  CHECK_THROWS_AS(parse_hyperparams("nonsense_key=1\n"), CheckpointError);
}

TEST_CASE("training decreases the loss and is seed reproducible") {
  GeneratorConfig gc;
  gc.n_dialogues = 12;
  gc.style = TaskStyle::KbLookup;
  gc.seed = 19;
  auto data = generate_synthetic(gc);
  std::vector<Dialogue> train_set(data.begin(), data.begin() + 10);
  std::vector<Dialogue> valid_set(data.begin() + 10, data.end());

  Hyperparams hp = small_hp();
  hp.epochs = 3;
  TrainOutput a = train(train_set, valid_set, hp);
  CHECK(a.logs.size() == 3);
  CHECK(a.logs.back().train_loss < a.logs.front().train_loss);

  TrainOutput b = train(train_set, valid_set, hp);
  REQUIRE(a.best.tensors.size() == b.best.tensors.size());
  for (std::size_t i = 0; i < a.best.tensors.size(); ++i) {
    CHECK(a.best.tensors[i].name == b.best.tensors[i].name);
    CHECK(a.best.tensors[i].data == b.best.tensors[i].data);
  }
}

TEST_CASE("lr zero leaves parameters at their initialization") {
  GeneratorConfig gc;
  gc.n_dialogues = 4;
  gc.seed = 23;
  auto data = generate_synthetic(gc);

  Hyperparams hp = small_hp();
  hp.lr = 0.0;
  hp.epochs = 1;
  TrainOutput out = train(data, {}, hp);

  Vocabulary vocab = build_vocab(data);
  RngState rng(hp.seed);
  ThpnModel fresh(model_config_from(hp, vocab.size()), vocab, rng);
  Checkpoint init = snapshot(fresh, hp);
  REQUIRE(init.tensors.size() == out.best.tensors.size());
  for (std::size_t i = 0; i < init.tensors.size(); ++i)
    CHECK(init.tensors[i].data == out.best.tensors[i].data);
}

TEST_CASE("checkpoint round trip is byte-identical and validates") {
  GeneratorConfig gc;
  gc.n_dialogues = 4;
  gc.seed = 29;
  auto data = generate_synthetic(gc);
  Hyperparams hp = small_hp();
  hp.epochs = 0;  // snapshot of the initialization
  TrainOutput out = train(data, {}, hp);

  const std::string p1 = "/tmp/thpn_ckpt_a.bin";
  const std::string p2 = "/tmp/thpn_ckpt_b.bin";
  save_checkpoint(out.best, p1);
  Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // version mismatch is an explicit incompatibility error
  std::string corrupted = b1;
  corrupted[4] = 99;
  write_file_atomic("/tmp/thpn_ckpt_bad.bin", corrupted);
  CHECK_THROWS_AS(load_checkpoint("/tmp/thpn_ckpt_bad.bin"), CheckpointError);

  // generate() output identical before save and after load
  LoadedModel lm = load_model(p1);
  Vocabulary vocab(out.best.vocab_tokens);
  RngState rng(hp.seed);
  ThpnModel direct(model_config_from(hp, vocab.size()), vocab, rng);
  apply_checkpoint(out.best, direct);
  const Dialogue& d = data[0];
  EncodedContext ctx = build_context(history_through_user_turn(d, 0), d.kb);
  auto retrieved = sentinel_only_answers();
  RngState gen_rng(1);
  auto s1 = direct.generate(ctx, retrieved, 8, gen_rng);
  auto s2 = lm.model.generate(ctx, retrieved, 8, gen_rng);
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i].token == s2[i].token);

  for (const char* p : {"/tmp/thpn_ckpt_a.bin", "/tmp/thpn_ckpt_b.bin", "/tmp/thpn_ckpt_bad.bin"})
    std::filesystem::remove(p);
}

TEST_CASE("no_ir training never queries retrieval and no_gate bypasses the gate") {
  GeneratorConfig gc;
  gc.n_dialogues = 6;
  gc.seed = 31;
  auto data = generate_synthetic(gc);
  Vocabulary vocab = build_vocab(data);

  // no_ir: the decode path builds a sentinel-only segment and P_r stays put
  Hyperparams hp = small_hp();
  hp.no_ir = true;
  hp.epochs = 1;
  TrainOutput out = train(data, {}, hp);  // would throw if retrieval were touched
  CHECK(out.logs.size() == 1);

  // no_gate: the gate is never invoked during decoding
  ModelConfig mc = model_config_from(small_hp(), vocab.size());
  mc.no_gate = true;
  RngState rng(5);
  ThpnModel model(mc, vocab, rng);
  EncodedContext ctx = build_context(history_through_user_turn(data[0], 0), data[0].kb);
  auto retrieved = sentinel_only_answers();
  RngState gen_rng(2);
  model.generate(ctx, retrieved, 6, gen_rng);
  CHECK(model.gate_calls() == 0);

  ModelConfig mc2 = model_config_from(small_hp(), vocab.size());
  RngState rng2(5);
  ThpnModel gated(mc2, vocab, rng2);
  gated.generate(ctx, retrieved, 6, gen_rng);
  CHECK(gated.gate_calls() > 0);
}

TEST_CASE("decode_corpus aligns references and counts retrievals") {
  GeneratorConfig gc;
  gc.n_dialogues = 5;
  gc.style = TaskStyle::KbLookup;
  gc.seed = 37;
  auto data = generate_synthetic(gc);

  Hyperparams hp = small_hp();
  TrainOutput out = train(data, {}, hp);
  LoadedModel lm = [&] {
    const std::string p = "/tmp/thpn_ckpt_decode.bin";
    save_checkpoint(out.best, p);
    LoadedModel m = load_model(p);
    std::filesystem::remove(p);
    return m;
  }();

  RetrievalConfig rcfg;
  rcfg.theta = hp.theta;
  rcfg.method = RetrievalMethod::EmbedCosine;
  Vocabulary vocab(out.best.vocab_tokens);
  Mat init_emb = lm.initial_encoder_embedding;
  auto repo = build_repository(extract_qa_pairs(data), rcfg, &lm.model.vocab(), &init_emb);
  auto entities = corpus_entity_set(data);
  DecodeResult res = decode_corpus(lm.model, data, &repo, rcfg, hp, entities);

  std::size_t turns = 0;
  for (const auto& d : data) turns += d.turns.size();
  CHECK(res.references.size() == turns);
  CHECK(res.hypotheses.size() == turns);
  CHECK(res.retrieved_counts.size() == turns);
  for (int c : res.retrieved_counts) {
    CHECK(c >= 1);
    CHECK(c <= 3);
  }
}
