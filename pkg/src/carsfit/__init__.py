"""Kernel-surrogate fitting of CARS spectra for temperature and composition."""
from .errors import CarsFitError, DegenerateLibraryError, DomainError, FormatError, IllConditionedError, VersionError
from .fitter import FitConfig, FitResult, fit, fit_batch
from .kernel import SurrogateModel, load_model, predict, predict_jacobian, save_model, train
from .lagrange import GridInterpolant, build_lagrange, lagrange_predict
from .library import SpectralLibrary, build_library, load_library, sample_physical_parameters, save_library
from .oracle import DEFAULT_BOXES, PARAM_NAMES, OracleConfig, WavenumberGrid, add_noise, generate_spectrum
from .tuning import CvConfig, CvReport, fit_final, select_gamma

__version__ = "0.1.0"
