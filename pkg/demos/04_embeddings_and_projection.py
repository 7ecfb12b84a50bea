"""
Exporting embeddings and judging the clusters
=============================================

The encoder's final linear block is the representation the framework
audits. This demo trains briefly, exports test-split embeddings to the
documented CSV table, projects them to 2-D with the native PCA, renders
the scatter, and quantifies cluster quality with the mean silhouette.
"""

from pathlib import Path

from binimage.analysis import cluster_quality, export_embeddings, project_2d
from binimage.dataset import SplitSpec, stratified_split, synth_corpus
from binimage.svg import scatter_svg
from binimage.trainer import TrainConfig, train

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

corpus = synth_corpus(families=4, per_family=25, seed=1, size=20)
train_set, test_set = stratified_split(corpus, SplitSpec(0.8, seed=1))

config = TrainConfig.from_dict({
    "model": {"input_size": 20, "families": 4, "same_channels": [4],
              "valid_channels": [8, 16], "embed_channels": 16,
              "mlp_width": 32, "mlp_blocks": 2},
    "ema": {"tau": 0.99},
    "batch_size": 10, "learning_rate": 3e-3, "max_steps": 400, "seed": 1,
})
result = train(config, train_set, eval_corpus=test_set)
print(f"test accuracy after {config.max_steps} steps: {result.report.accuracy:.3f}")

# Embeddings: one flattened (h*w*c) float row per sample.
table = export_embeddings(result.state.student, test_set)
csv_path = out_dir / "embeddings.csv"
table.to_csv(csv_path)
print(f"embedding table: {len(table)} rows x {table.dim} dims -> {csv_path}")

# 2-D view: deterministic PCA. (Pass method="external" and a command to
# substitute any projector that speaks the CSV protocol, e.g. a UMAP
# wrapper script.)
projection = project_2d(table, method="pca")
svg_path = out_dir / "projection.svg"
svg_path.write_text(
    scatter_svg(projection.xy, projection.family_ids, corpus.family_names,
                title="Test-split embeddings (PCA)"),
    encoding="utf-8",
)
print(f"wrote {svg_path}")

# One number for "how well separated are the families?": the mean
# silhouette over all samples, in [-1, 1], higher is better.
print(f"silhouette on full embeddings: {cluster_quality(table):.3f}")
