"""
Training both variants on a copy task
=====================================

A desk-sized stand-in for translation: the target is the source sentence.
Pass --epochs to shorten the run (the shipped configs use 30).
"""

import sys

from projsdpa.data import EncodedSplit, build_vocabs, encode_source, make_copy_task, split_dataset
from projsdpa.model import ModelConfig, TransformerParams, greedy_decode, parameter_count
from projsdpa.training import TrainConfig, train

epochs = int(sys.argv[sys.argv.index("--epochs") + 1]) if "--epochs" in sys.argv else 6

pairs = make_copy_task(vocab_size=20, seq_len=8, n=2500, seed=1, min_len=1)
train_pairs, val_pairs, _ = split_dataset(pairs, (0.8, 0.1, 0.1), seed=1)
src_vocab, tgt_vocab = build_vocabs(train_pairs, 20)
print("example pair:", train_pairs[0])

for variant, sigma2 in (("standard", 1.0), ("projection", 8**0.5)):
    cfg = ModelConfig(d_model=64, num_heads=8, ff_dim=256, src_vocab=len(src_vocab), tgt_vocab=len(tgt_vocab),
                      max_len=10, variant=variant, sigma2_self=sigma2, sigma2_cross=sigma2, seed=1)
    tr = EncodedSplit.from_pairs(train_pairs, src_vocab, tgt_vocab, cfg.max_len)
    va = EncodedSplit.from_pairs(val_pairs, src_vocab, tgt_vocab, cfg.max_len)
    params = TransformerParams.init(cfg)
    print(f"\n{variant}: {parameter_count(cfg)} parameters")
    records = train(params, cfg, tr, va, TrainConfig(epochs=epochs, batch_size=32, lr=1e-3, seed=1))
    for r in records:
        if r.split == "val":
            print(f"  epoch {r.epoch:2d}  val loss {r.loss:.4f}  val accuracy {r.accuracy:.4f}  ({r.seconds:.1f}s)")
    for text in ("a b c", "p o n m", "h e l l o"):
        ids = greedy_decode(encode_source(text, src_vocab, cfg.max_len), params, cfg)
        print(f"  {text!r:12} -> {' '.join(tgt_vocab.decode(ids))!r}")
