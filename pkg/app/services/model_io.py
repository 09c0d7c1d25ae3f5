"""
Model file I/O: reading and writing model documents and turning their named
measures, processes, family and DRBSDE instances into domain objects.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np

from app.core.exceptions import ModelValidationError
from app.models.drbsde import DrbsdeInstance, Driver, LinearDriver, ZeroDriver
from app.models.family import MeasureFamily
from app.models.filtration import AdaptedProcess, FiltrationModel, Measure
from app.schemas.model import DriverDocument, FamilyDocument, ModelDocument
from app.services.filtration_core import filtration_service

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def load_document(path: PathLike) -> ModelDocument:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelValidationError(f"{path}: invalid JSON ({e})")
    return ModelDocument.model_validate(raw)


def dump_document(doc, path: PathLike = None) -> str:
    """Canonical JSON (sorted keys, full float precision)"""
    text = json.dumps(doc.model_dump(exclude_none=True), sort_keys=True, indent=2, ensure_ascii=False)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


class LoadedModel:
    """A built model together with the named objects riding along in its document"""

    def __init__(self, doc: ModelDocument):
        self.doc = doc
        self.model: FiltrationModel = filtration_service.build_model(doc)

    def measure(self, name: str = "ref") -> Measure:
        if name in ("ref", "", None):
            return self.model.reference_measure()
        if name not in self.doc.measures:
            raise ModelValidationError(f"unknown measure {name}")
        return filtration_service.measure_from_overrides(self.model, self.doc.measures[name], name)

    def process(self, name: str) -> AdaptedProcess:
        if name not in self.doc.processes:
            raise ModelValidationError(f"unknown process {name}")
        return AdaptedProcess.from_mapping(self.model, self.doc.processes[name], name)

    def family(self, family_doc: FamilyDocument = None) -> MeasureFamily:
        family_doc = family_doc or self.doc.family
        if family_doc is None:
            raise ModelValidationError("model document has no family")
        if family_doc.kind == "explicit":
            family = MeasureFamily.explicit(self.model, [self.measure(n) for n in family_doc.measures])
            logger.warning(f"explicit family of {len(family.measures)} measures used without pasting-closure check")
            return family
        choices = {}
        for node_id, rows in family_doc.choices.items():
            if node_id not in self.model.index:
                raise ModelValidationError(f"family choice set for unknown node {node_id}")
            choices[self.model.index[node_id]] = rows
        return MeasureFamily.rectangular(self.model, choices)

    def driver(self, doc: DriverDocument) -> Driver:
        if doc.kind == "zero":
            return ZeroDriver()
        if isinstance(doc.c, dict):
            c = AdaptedProcess.from_mapping(self.model, doc.c, "driver.c").values
        else:
            c = doc.c
        return LinearDriver(doc.a, doc.b, c, doc.lipschitz)

    def instance(self, name: str = None) -> DrbsdeInstance:
        if not self.doc.instances:
            raise ModelValidationError("model document has no DRBSDE instances")
        if name is None:
            name = sorted(self.doc.instances)[0]
        if name not in self.doc.instances:
            raise ModelValidationError(f"unknown instance {name}")
        spec = self.doc.instances[name]
        return DrbsdeInstance(
            self.model,
            self.process(spec.terminal),
            self.process(spec.lower),
            self.process(spec.upper),
            self.driver(spec.driver),
            spec.dt,
        )


def load_model(path: PathLike) -> LoadedModel:
    return LoadedModel(load_document(path))


def model_document(model: FiltrationModel, processes: Dict[str, AdaptedProcess] = None, **extra) -> ModelDocument:
    """Document for a built model plus named processes and any extra document fields"""
    doc = filtration_service.to_document(model)
    data = doc.model_dump()
    data["processes"] = {name: p.to_mapping(model) for name, p in (processes or {}).items()}
    data.update(extra)
    return ModelDocument.model_validate(data)


def measure_overrides(model: FiltrationModel, measure: Measure) -> Dict[str, float]:
    """Per-edge overrides of a measure relative to the model's reference probabilities"""
    diff = np.flatnonzero(measure.prob[1:] != model.ref_prob[1:]) + 1
    return {model.ids[v]: float(measure.prob[v]) for v in diff}
