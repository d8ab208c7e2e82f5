"""bijmap: dense pointwise correspondence recovery between deformable
triangle meshes, and Bayesian denoising of any correspondence into a
guaranteed bijection via a linear assignment problem."""

import os

# the TBB layer available here predates what numba wants; prefer OpenMP
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .mesh import TriMesh, SampleHierarchy, load_mesh, save_off, \
    farthest_point_sample, synth_pair
from .geodesics import DistanceField, distance_field, all_pairs, \
    save_distances, load_distances
from .spectral import SpectralBasis, CompressedDistances, build_laplacian, \
    eigenbasis, compute_basis, analyze, synthesize, compress_distances, \
    save_spectral, load_spectral
from .fmap import PointMap, FunctionalMap, SparseCorrespondence, build_fmap, \
    recover_nn, recover_bijective_nn, recover_icp, interpolate_sparse
from .lap import AssignmentProblem, AssignmentResult, solve_auction, \
    solve_bruteforce
from .bayes import BayesConfig, bayes_denoise, score_rows, sigma_sweep
from .multiscale import MultiscaleConfig, bayes_denoise_multiscale
from .evaluation import ErrorReport, CoverageReport, StageTimer, \
    geodesic_error, coverage, runtime_report

__version__ = "0.1.0"
