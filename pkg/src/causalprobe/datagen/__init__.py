"""Synthetic SCM data: DAG families, mechanisms, noise, interventions, file formats."""

from .graphs import (
    ER, FAMILIES, GRG, SBM, SF_IN, SF_OUT, WS, PARAM_DOMAINS,
    Dag, GraphFamilyConfig, is_acyclic, sample_dag, sample_graph_config,
)
from .scm import (
    CAUCHY, GAUSSIAN, LAPLACE, LINEAR, MECHANISMS, NOISES, RFF,
    DataGenConfig, Dataset, LinearMechanism, NoiseSpec, RffMechanism, Scm,
    ancestral_sample, eval_mechanism, generate_dataset, sample_scm, standardize,
)
from .serialization import (
    dataset_from_json, dataset_to_json, deserialize_dataset, read_dataset,
    serialize_dataset, write_dataset,
)
