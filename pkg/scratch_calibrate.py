"""Scratch calibration for the directional experiments (not part of the package)."""
import sys, time, tempfile
sys.path.insert(0, "tests")
import numpy as np
from synth import make_records, shift_variants
from qalign.augment import TranslationGroup
from qalign.encoder import EncoderConfig, forward, gap, load_checkpoint
from qalign.features import FeatureConfig, build_features, stack_batch
from qalign.tokenizer import build_vocab
from qalign.trainer import TrainConfig, train, pretrain_qa_head
from qalign.evaluation import evaluate, DecodeConfig

FEAT = FeatureConfig(max_length=32, doc_stride=4)

def pooled_vec(params, enc, record, vocab):
    feats = build_features(record, vocab, FEAT)
    feat = next((f for f in feats if f.start_label > 0), feats[0])
    b = stack_batch([feat])
    out = forward(params, enc, b.ids, b.attention_mask, b.segment_ids)
    return gap(out.tapped, b.attention_mask)[0]

def cosine_distance(a, b):
    return 1.0 - float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

def run_seed(seed, steps2=150, steps3=100, lr=1e-3):
    t0 = time.time()
    en = make_records(200, seed=1000 + seed, language="en", id_prefix="e", context_words=6)
    lowres = make_records(36, seed=2000 + seed, language="aa", id_prefix="a", context_words=6)
    tr, va = lowres[:24], lowres[24:]
    variants = shift_variants(tr, "bb")
    groups = {
        r.id: TranslationGroup(original=r, variants={"bb": v}, provenance={"bb": "translation"})
        for r, v in zip(tr, variants)
    }
    corpus = [r.context for r in en + tr + variants] + [r.question for r in en + tr + variants]
    vocab = build_vocab(corpus, 2048)
    enc = EncoderConfig(vocab_size=len(vocab), d_model=32, n_layers=4, n_heads=4,
                        d_ffn=128, max_positions=64, tap_layer=3)
    dcfg = DecodeConfig()

    with tempfile.TemporaryDirectory() as tmp:
        cfg2 = TrainConfig(batch_size=16, max_steps=steps2, learning_rate=lr,
                           weight_decay=0.01, contrastive_interval=steps2,
                           max_contrastive_steps=steps2, eval_interval=steps2, seed=seed)
        s2 = pretrain_qa_head(en, [], vocab, enc, FEAT, cfg2, f"{tmp}/s2")
        init = load_checkpoint(s2.best_checkpoint).params

        cfg3 = TrainConfig(batch_size=16, max_steps=steps3, learning_rate=lr,
                           weight_decay=0.01, w_contrastive=0.0,
                           contrastive_interval=steps3, max_contrastive_steps=steps3,
                           eval_interval=steps3, seed=seed)
        r_rand = train(tr, va, None, vocab, enc, FEAT, cfg3, f"{tmp}/rand")
        r_pre = train(tr, va, None, vocab, enc, FEAT, cfg3, f"{tmp}/pre", init_from=init)
        j_rand = r_rand.best_jaccard
        j_pre = r_pre.best_jaccard

        # (b): augmented training, w=0 vs w=0.05 dense gating
        cfg_w0 = TrainConfig(batch_size=16, max_steps=steps3, learning_rate=lr,
                             weight_decay=0.01, w_contrastive=0.0,
                             contrastive_interval=5, max_contrastive_steps=steps3,
                             eval_interval=steps3, seed=seed)
        cfg_wc = TrainConfig(batch_size=16, max_steps=steps3, learning_rate=lr,
                             weight_decay=0.01, w_contrastive=0.05,
                             contrastive_interval=5, max_contrastive_steps=steps3,
                             eval_interval=steps3, seed=seed)
        r_w0 = train(tr + variants, [], groups, vocab, enc, FEAT, cfg_w0, f"{tmp}/w0", init_from=init)
        r_wc = train(tr + variants, [], groups, vocab, enc, FEAT, cfg_wc, f"{tmp}/wc", init_from=init)
        p_w0 = load_checkpoint(r_w0.best_checkpoint).params
        p_wc = load_checkpoint(r_wc.best_checkpoint).params

        def mean_dist(params):
            ds = []
            for r, v in zip(tr, variants):
                ds.append(cosine_distance(pooled_vec(params, enc, r, vocab),
                                          pooled_vec(params, enc, v, vocab)))
            return sum(ds) / len(ds)

        d_w0 = mean_dist(p_w0)
        d_wc = mean_dist(p_wc)
    print(f"seed {seed}: j_rand={j_rand:.3f} j_pre={j_pre:.3f} (a) {'PASS' if j_pre > j_rand else 'FAIL'}"
          f" | d_w0={d_w0:.4f} d_wc={d_wc:.4f} (b) {'PASS' if d_wc < d_w0 else 'FAIL'}"
          f" | {time.time()-t0:.0f}s")
    return j_pre > j_rand, d_wc < d_w0

t_all = time.time()
results = [run_seed(s) for s in range(5)]
a_wins = sum(1 for a, _ in results if a)
b_wins = sum(1 for _, b in results if b)
print(f"(a) {a_wins}/5, (b) {b_wins}/5, total {time.time()-t_all:.0f}s")
