# ipa/collapse.py - Embedding dimensional-collapse analysis
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from ipa.aggregate import weighted_layer
from ipa.data import TabularDataset
from ipa.errors import ConfigError, ContractError, DimensionError, UndefinedMetricError
from ipa.interaction import InteractionKind
from ipa.layers import PoolingKind
from ipa.linalg import singular_values
from ipa.model import IpaModel

logger = logging.getLogger(__name__)

P95_COVERAGE = 0.95
COVERAGE_SLACK = 1e-12


@dataclass
class FieldSpectrum:
    field_id: int
    name: str
    cardinality: int
    singular_values: np.ndarray
    singular_sum: float
    information_abundance: float
    p95_dimension: int
    importance: Optional[float] = None


@dataclass
class CollapseReport:
    fields: List[FieldSpectrum] = field(default_factory=list)
    by_cardinality: List[int] = field(default_factory=list)
    by_importance: List[int] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        k = max((len(f.singular_values) for f in self.fields), default=0)
        rows = []
        for spectrum in self.fields:
            row = {
                "field_id": spectrum.field_id,
                "cardinality": spectrum.cardinality,
                "importance": spectrum.importance,
                "singular_sum": spectrum.singular_sum,
                "information_abundance": spectrum.information_abundance,
                "p95_dim": spectrum.p95_dimension,
            }
            for i in range(k):
                row[f"sigma_{i + 1}"] = spectrum.singular_values[i]
            rows.append(row)
        return pd.DataFrame(rows)

    def write_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def sample_weighted_matrix(embeddings: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Rows scaled by sqrt(count / total): the Gram matrix becomes the sample second moment"""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    if embeddings.ndim != 2 or counts.shape[0] != embeddings.shape[0]:
        raise DimensionError(f"{counts.shape[0]} counts for an embedding table of shape {embeddings.shape}")
    total = counts.sum()
    if total <= 0:
        raise ContractError("feature counts sum to zero")
    return embeddings * np.sqrt(counts / total)[:, None]


def _spectrum(e) -> np.ndarray:
    sigma = singular_values(e)
    if sigma[0] <= 0:
        raise UndefinedMetricError("all-zero matrix has no spectrum to summarize")
    return sigma


def information_abundance(e) -> float:
    """Singular sum divided by the largest singular value"""
    sigma = _spectrum(e)
    return float(sigma.sum() / sigma[0])


def p95_dimension_of_spectrum(sigma: np.ndarray) -> int:
    sigma = np.sort(np.asarray(sigma, dtype=np.float64))[::-1]
    cumulative = np.cumsum(sigma)
    threshold = P95_COVERAGE * cumulative[-1] * (1.0 - COVERAGE_SLACK)
    return int(np.argmax(cumulative >= threshold)) + 1


def p95_dimension(e) -> int:
    """Smallest k whose top-k singular values cover 95% of the singular sum"""
    return p95_dimension_of_spectrum(_spectrum(e))


def fwfm_field_importance(pair_weights: np.ndarray) -> np.ndarray:
    """Mean |w_ij| over j != i, with w_ij and w_ji averaged"""
    w = np.abs(np.asarray(pair_weights, dtype=np.float64))
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"pair weights must be square, got {w.shape}")
    m = w.shape[0]
    if m < 2:
        raise ContractError("field importance needs at least two fields")
    sym = 0.5 * (w + w.T)
    np.fill_diagonal(sym, 0.0)
    return sym.sum(axis=1) / (m - 1)


def model_pair_weights(model: IpaModel) -> np.ndarray:
    """The M x M scalar pair weights of a Weighted Field model's first interaction layer"""
    code = model.config.code
    if code.interaction is not InteractionKind.WEIGHTED or code.pooling is not PoolingKind.FIELD:
        raise ConfigError(f"pair weights need a Weighted Field model, got {code}")
    if not model.layer_params.layers:
        raise ConfigError("model has no interaction layer")
    layer = model.layer_params.layers[0]
    return np.where(layer.present, layer.dense() / layer.scale, 0.0)


def collapse_report(model: IpaModel, dataset: TabularDataset,
                    importance_model: Optional[IpaModel] = None) -> CollapseReport:
    """Per-field sample-weighted spectra and the two field orderings.

    Importance comes from `importance_model` (or `model` itself when it is a
    Weighted Field model); without one the importance column stays empty
    and the importance ordering equals the cardinality ordering.
    """
    if list(dataset.vocab_sizes()) != list(model.vocab_sizes):
        raise DimensionError("dataset schema does not match the model's vocabulary sizes")

    source = importance_model
    code = model.config.code
    if source is None and code.interaction is InteractionKind.WEIGHTED and code.pooling is PoolingKind.FIELD:
        source = model
    if source is not None and len(source.vocab_sizes) != len(model.vocab_sizes):
        raise DimensionError("importance model has a different number of fields")
    importance = None
    if source is not None and len(model.vocab_sizes) > 1:
        importance = fwfm_field_importance(model_pair_weights(source))

    report = CollapseReport()
    for f, spec in enumerate(dataset.fields):
        counts = dataset.feature_counts(f)
        embeddings = model.field_embeddings(f)
        if counts.sum() > 0:
            weighted = sample_weighted_matrix(embeddings, counts)
        else:
            logger.warning(f"Field {spec.name} has no active features; using unweighted embeddings")
            weighted = embeddings
        sigma = singular_values(weighted)
        if sigma[0] > 0:
            abundance = float(sigma.sum() / sigma[0])
            p95 = p95_dimension_of_spectrum(sigma)
        else:
            abundance, p95 = float("nan"), 0
        report.fields.append(FieldSpectrum(
            field_id=f,
            name=spec.name,
            cardinality=spec.vocab,
            singular_values=sigma,
            singular_sum=float(sigma.sum()),
            information_abundance=abundance,
            p95_dimension=p95,
            importance=float(importance[f]) if importance is not None else None,
        ))

    report.by_cardinality = sorted(range(len(report.fields)), key=lambda i: (-report.fields[i].cardinality, i))
    if importance is not None:
        report.by_importance = sorted(range(len(report.fields)), key=lambda i: (-importance[i], i))
    else:
        report.by_importance = list(report.by_cardinality)
    logger.info(f"Collapse report over {len(report.fields)} fields")
    return report


def layer_strength(model: IpaModel, dataset: TabularDataset, batch_size: int = 2048) -> pd.DataFrame:
    """Mean L2 norm, over samples, of each aggregated layer's weighted contribution to r"""
    totals = None
    first = model.first_aggregated_layer()
    for start in range(0, len(dataset), batch_size):
        stop = start + batch_size
        _, layers = model.layer_terms(dataset.ids[start:stop], dataset.weights[start:stop])
        norms = [np.linalg.norm(weighted_layer(h, model.agg_spec, model.agg_weights, i), axis=1).sum()
                 for i, h in enumerate(layers)]
        totals = np.array(norms) if totals is None else totals + norms
    if totals is None:
        raise ContractError("layer strength needs a non-empty dataset")
    return pd.DataFrame({"layer": np.arange(first, first + len(totals)), "strength": totals / len(dataset)})
