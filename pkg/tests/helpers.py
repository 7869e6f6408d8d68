"""Instance generators shared by several test modules."""

from ctxview.scene import BBox, ObjectHypothesis, Scene, annotation


def random_instance(rng, K=4, max_images=10, max_objects=8):
    """Small scenes with jittered, duplicated and spurious hypotheses."""
    scenes = []
    for i in range(int(rng.integers(1, max_images + 1))):
        n = int(rng.integers(0, max_objects + 1))
        anns = [annotation(str(rng.choice(["Car", "Van"])), BBox(80.0 * k + 40, 50.0, 40.0, 30.0),
                           int(rng.integers(0, K))) for k in range(n)]
        hyps = []
        for a in anns:
            for _ in range(int(rng.integers(0, 3))):
                shift = rng.normal(0, 8, size=2)
                box = BBox(a.box.cx + shift[0], a.box.cy + shift[1], a.box.w, a.box.h)
                vp = a.viewpoint if rng.random() < 0.6 else int(rng.integers(0, K))
                # coarse scores force ties in the ranking
                hyps.append(ObjectHypothesis(a.category, box, round(float(rng.random()), 1), vp))
        for _ in range(int(rng.integers(0, 3))):
            hyps.append(ObjectHypothesis("Car", BBox(float(rng.uniform(0, 700)), 200.0, 40.0, 30.0),
                                         round(float(rng.random()), 1), int(rng.integers(0, K))))
        hyps = [hyps[k] for k in rng.permutation(len(hyps))][:max_objects]
        scenes.append(Scene(f"{i // 3:04d}_{i % 3:06d}", tuple(hyps), tuple(anns)))
    return scenes
