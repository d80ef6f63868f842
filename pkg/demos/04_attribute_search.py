"""Differentiable attribute search on a task with one informative attribute.

Four candidate bases give a pool of 15 non-empty combinations. Labels are
driven entirely by color, so a successful search should put most of its
mixture weight on combinations containing color and select one of them.
"""

from promptlab.data import LatentAttribute, TaskSpec, generate_task
from promptlab.encoders import DualEncoder, build_config_for
from promptlab.search import SearchConfig, alternating_search, enumerate_pool, format_result

BASES = ("color", "shape", "size", "texture")

pool = enumerate_pool(BASES)
print(f"{len(BASES)} bases -> {len(pool)} candidates (2^N - 1)")
print("first few:", pool[:5])

task = generate_task(TaskSpec(
    num_classes=8,
    samples_per_class=32,
    latent_attributes=(
        LatentAttribute("color", tuple(f"color{i}" for i in range(8))),
        LatentAttribute("shape", ("shape0",)),
        LatentAttribute("size", ("size0",)),
        LatentAttribute("texture", ("texture0",)),
    ),
    informative_attributes=("color",),
    value_spread=0.8,
    include_id_words=False,
    feature_map="identity",
    raw_feature_dim=32,
    embed_dim=32,
    seed=303,
))

encoder = DualEncoder(
    build_config_for(task.vocabulary, num_heads=1, joint_dim=32,
                     image_dim=32, image_hidden_dim=32),
    task.vocabulary, seed=3,
)

# Alternating first-order steps: theta (prompts) on the train split, alpha
# (mixture logits) on the val split. Ten epochs is enough at this scale.
result = alternating_search(
    task, BASES,
    SearchConfig(seed=3, theta_lr=0.05, alpha_lr=0.05, epochs=10),
    encoder,
)

print()
print(format_result(result))
print()
print("selected:", result.selected)
assert "color" in result.selected
top3 = sorted(zip(result.weights, result.candidates), reverse=True)[:3]
for w, cand in top3:
    print(f"  {w:.3f}  {cand}")
