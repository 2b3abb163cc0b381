"""Honest multiscale confidence bands for isotonic and convex regression on grids."""

from .bands import BandResult, Box, build_bands, build_bands_kappa, check_coverage, width_profile
from .calibration import (Calibration, CalibrationError, ContextMismatchError, cached_calibration,
                          calibrate, load_calibration, save_calibration)
from .constants import OptimalityConstants, optimal_constants, predicted_width
from .engine import (gamma_penalty, multiscale_statistic, scan_brute, standardized_average, tstar,
                     two_sided_statistic)
from .grid import (Bandwidth, BandwidthPolicy, CapacityError, Field, FieldFormatError, GridDesign,
                   GridMismatchError, Window, bandwidths, enumerate_windows, field_from_function,
                   is_admissible, make_grid, read_field_csv, write_field_csv)
from .kernels import (Kernel, KernelId, KernelPair, ShapeClass, check_bias_condition,
                      custom_kernel, get_kernel, kernel_pair, window_weights)
from .sim import builtin_functions, coverage_study, generate_data, rate_diagnostic

__version__ = "0.1.0"
