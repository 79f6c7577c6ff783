import math

import numpy as np
from marshmallow import Schema, ValidationError, fields, post_load

from .manifest import Manifest
from .count_matrix import CountMatrix
from .model import AllocationDraw, ModelParams, SyntheticDataset
from .special_fn import LevyParams


class ArrayField(fields.Field):
    """A numpy array stored as nested JSON lists.

    Args:
        dtype: numpy dtype used when loading. Defaults to float.
    """

    def __init__(self, dtype=float, **kwargs):
        super().__init__(**kwargs)
        self.dtype = dtype

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return np.asarray(value).tolist()

    def _deserialize(self, value, attr, data, **kwargs):
        try:
            return np.asarray(value, dtype=self.dtype)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"not an array of {np.dtype(self.dtype).name}") from exc


class FiniteFloat(fields.Float):
    """A float dumped as null when it is None, infinite or NaN."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None or not math.isfinite(value):
            return None
        return super()._serialize(value, attr, obj, **kwargs)


class LevyParamsSchema(Schema):
    """Schema for LevyParams."""

    alpha = fields.Float(required=True)
    theta = fields.Float(required=True)
    zeta = fields.Float(required=True)

    @post_load
    def make(self, data, **kwargs):
        return LevyParams(**data)


class ModelParamsSchema(Schema):
    """Schema for ModelParams."""

    base = fields.Nested(LevyParamsSchema, required=True)
    groups = fields.List(fields.Nested(LevyParamsSchema), required=True)
    gamma_weights = fields.List(ArrayField())

    @post_load
    def make(self, data, **kwargs):
        return ModelParams(**data)


class AllocationDrawSchema(Schema):
    """Schema for AllocationDraw."""

    x_total = ArrayField(dtype=np.int64, required=True)
    x_blocks = ArrayField(dtype=np.int64, required=True)

    @post_load
    def make(self, data, **kwargs):
        return AllocationDraw(data["x_total"], data["x_blocks"])


class CountMatrixSchema(Schema):
    """Schema for CountMatrix; empty columns are kept on load."""

    groups = fields.List(fields.String(), required=True)
    species = fields.List(fields.String(), required=True)
    values = ArrayField(dtype=np.int64, required=True)
    samples = ArrayField(dtype=np.int64)
    exposure = ArrayField()

    @post_load
    def make(self, data, **kwargs):
        values = data.pop("values").reshape(len(data["groups"]), len(data["species"]))
        return CountMatrix(values=values, drop_empty=False, **data)


class SyntheticDatasetSchema(Schema):
    """Schema for SyntheticDataset: public counts with the latent truth."""

    counts = fields.Nested(CountMatrixSchema, required=True)
    allocation = fields.Nested(AllocationDrawSchema, required=True)
    otu_counts = fields.List(fields.List(ArrayField(dtype=np.int64)), required=True)
    params = fields.Nested(ModelParamsSchema, required=True)
    per_sample = fields.List(ArrayField(dtype=np.int64), allow_none=True)

    @post_load
    def make(self, data, **kwargs):
        return SyntheticDataset(
            data["counts"], data["allocation"], data["otu_counts"], data["params"], data.get("per_sample")
        )


class ManifestSchema(Schema):
    """Schema for the run manifest written next to every command's outputs."""

    command = fields.String(required=True)
    seed = fields.Integer(allow_none=True)
    config = fields.Dict(keys=fields.String())
    versions = fields.Dict(keys=fields.String(), values=fields.String())
    outputs = fields.List(fields.String())
    status = fields.String()

    @post_load
    def make(self, data, **kwargs):
        return Manifest(**data)


class DiagnosticsSchema(Schema):
    """Schema for the MCMC diagnostics report."""

    chains = fields.Integer(required=True)
    records_per_chain = fields.Integer(required=True)
    prior = fields.String(required=True)
    rhat = fields.Dict(keys=fields.String(), values=FiniteFloat(allow_none=True))
    acceptance = fields.Dict(keys=fields.String(), values=FiniteFloat(allow_none=True))
    posterior_mean = fields.Dict(keys=fields.String(), values=fields.Float())
    converged = fields.Boolean()
