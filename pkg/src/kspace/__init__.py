"""kspace: quantify the geometric gap between image and text attention keys.

The toolkit reads token-labeled key-vector dumps (one binary file per
decoder layer), conditions them per layer (standardize + PCA), exports 2-D
t-SNE coordinates for visual inspection, and measures the image/text
distribution gap with Gaussian-kernel MMD and base-2 Jensen-Shannon
divergence, each judged against intra-modality half-split baselines and
permutation tests.
"""

__version__ = "0.1.0"

from .divergence import (
    DivergenceConfig,
    DivergenceResult,
    ModalitySplit,
    build_split,
    intra_modality_baseline,
    js_kde_lowdim,
    js_random_projection,
    layer_divergence,
    mmd_rbf,
    permutation_test,
)
from .dumpstore import (
    LayerDump,
    Manifest,
    make_layer_dump,
    read_layer_dump,
    validate_dump_dir,
    write_layer_dump,
)
from .embed import EmbeddingResult, TsneConfig, export_embedding, subsample_tokens, tsne_embed
from .preprocess import PcaModel, StandardizeStats, pca_fit, pca_transform, standardize
from .report import AggregateReport, ResultTable, aggregate, load_fixture_table1, render_table
from .synth import SynthSpec, generate_dump, js_quadrature_oracle_1d, make_spec, population_mmd_oracle

__all__ = [
    "__version__",
    "DivergenceConfig",
    "DivergenceResult",
    "ModalitySplit",
    "build_split",
    "intra_modality_baseline",
    "js_kde_lowdim",
    "js_random_projection",
    "layer_divergence",
    "mmd_rbf",
    "permutation_test",
    "LayerDump",
    "Manifest",
    "make_layer_dump",
    "read_layer_dump",
    "validate_dump_dir",
    "write_layer_dump",
    "EmbeddingResult",
    "TsneConfig",
    "export_embedding",
    "subsample_tokens",
    "tsne_embed",
    "PcaModel",
    "StandardizeStats",
    "pca_fit",
    "pca_transform",
    "standardize",
    "AggregateReport",
    "ResultTable",
    "aggregate",
    "load_fixture_table1",
    "render_table",
    "SynthSpec",
    "generate_dump",
    "js_quadrature_oracle_1d",
    "make_spec",
    "population_mmd_oracle",
]
