"""Train a small caption model on synthetic scenes and decode a few.

Takes about a minute on a laptop CPU.

Run: python3 demos/03_caption_training.py
"""

from rescap.decoding import beam_decode, greedy_decode
from rescap.experiments import evaluate_model
from rescap.synth import GenConfig, generate_dataset
from rescap.training import TrainConfig, fit

cfg = GenConfig(min_entities=2, max_entities=3, deterministic_surface=True, noise_sigma=0.1)
train, _, test = generate_dataset(260, (200 / 260, 0.0, 60 / 260), cfg, seed=42)
print(f"dataset: {len(train.records)} train / {len(test.records)} test scenes, "
      f"vocab {train.vocab.size}")

model, log = fit(train, TrainConfig(epochs=25, seed=0, batch_size=32, learning_rate=5e-3,
                                    variant="BU+ResTd"))
for e in log.epochs[::6] + [log.epochs[-1]]:
    print(f"  epoch {e.epoch:2d}: loss {e.loss:.3f}  token acc {e.token_accuracy:.3f}")

print("\nsample decodes (greedy vs beam-3):")
for sr in test.records[:5]:
    greedy = greedy_decode(sr.record, model).to_text(train.vocab)
    beam = beam_decode(sr.record, model, width=3)[0].caption.to_text(train.vocab)
    print(f"  refs:   {sr.ref_texts}")
    print(f"  greedy: {greedy!r}   beam-3: {beam!r}")

report = evaluate_model(model, test, beam=1)
print(f"\ntest metrics: avg_BLEU {report.avg_bleu:.1f}  CIDEr {report.cider:.1f}  "
      f"METEOR-lite {report.meteor_lite:.1f}  ROUGE-L {report.rouge_l:.1f}")
