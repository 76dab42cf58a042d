"""Smoke test for the orbench extension module.

Build and run from the repository root:

    cargo build --release -p orbench-py
    cp target/release/liborbench.so python/orbench.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import orbench  # noqa: E402


def main():
    tasks = orbench.task_kinds()
    assert len(tasks) == 23, tasks
    assert orbench.normalize_label("  Head Surgeon ") == "head_surgeon"

    assert orbench.score_answer("people_counting", "5", "4") == 0.5
    assert orbench.score_answer("distance_3d", "2.20", "2.00") == 0.5
    assert orbench.score_answer("detection_2d", "0,0,10,10", "0,0,10,10") == 1.0

    assert abs(orbench.kl_div([1.0, 0.0], [0.5, 0.5]) - math.log(2)) < 1e-12
    t = [[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]]
    assert orbench.distill_loss(t, t, 2.0) == 0.0
    grad = orbench.distill_loss_grad(t, [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], 1.0)
    assert all(abs(sum(row)) < 1e-12 for row in grad)
    w = [[float(r * 10 + c) for c in range(4)] for r in range(3)]
    assert orbench.crop_weights(w, 2, 2) == [[0.0, 1.0], [10.0, 11.0]]

    with tempfile.TemporaryDirectory() as tmp:
        cfg = json.dumps({"simulator": {"n_clips": 3, "timepoints_per_clip": 20},
                          "sampling": {"train": 2000, "val": 300, "test": 300}})
        report = json.loads(orbench.run(tmp, seed=1, config_json=cfg))
        assert 0.0 < report["overall"]["mean"] < 1.0, report["overall"]

        test = orbench.read_qa(os.path.join(tmp, "test.jsonl"))
        train = orbench.read_qa(os.path.join(tmp, "train.jsonl"))
        assert test and train
        model = orbench.BaselinePredictor(train)
        assert isinstance(model.predict(test[0]), str)

        preds = os.path.join(tmp, "echo.jsonl")
        with open(preds, "w") as f:
            for q in test:
                f.write(json.dumps({"qa_id": q.id, "answer": q.answer}) + "\n")
        echo = json.loads(orbench.score_file(os.path.join(tmp, "test.jsonl"), preds,
                                             os.path.join(tmp, "echo_score.json")))
        assert echo["overall"]["mean"] == 1.0

    print("smoke test ok")


if __name__ == "__main__":
    main()
