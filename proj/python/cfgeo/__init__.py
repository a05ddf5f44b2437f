"""Geometry-adaptive counterfactual distribution estimation."""

from _cfgeo import (
    dis_band,
    fit_dis,
    fit_dss,
    peakiness,
    population_density,
    preset_names,
    run_experiment,
    simulate,
    stein,
)

__all__ = [
    "dis_band",
    "fit_dis",
    "fit_dss",
    "peakiness",
    "population_density",
    "preset_names",
    "run_experiment",
    "simulate",
    "stein",
]
