"""Ingestion, synthetic generators and model documents."""

from .generators import (GENERATORS, SEAMS, GeneratorSpec, gen_highorder, gen_vcm2d, gen_vcm2d_logit,
                         highorder_branch, vcm2d_truth)
from .io import (ColumnSpec, Role, column_specs, export_coefficients, load_csv, parse_grid,
                 read_action_rows, read_for_model, save_dataset, write_csv)
from .serialize import dumps, load_model, loads, save_model

__all__ = [
    "GENERATORS", "SEAMS", "GeneratorSpec", "gen_highorder", "gen_vcm2d", "gen_vcm2d_logit",
    "highorder_branch", "vcm2d_truth", "ColumnSpec", "Role", "column_specs", "export_coefficients",
    "load_csv", "parse_grid", "read_action_rows", "read_for_model", "save_dataset", "write_csv",
    "dumps", "load_model", "loads", "save_model",
]
