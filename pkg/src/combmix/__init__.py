"""Behavioral mixer modeling and frequency-comb OFDM radar validation.

The package splits into coherent signal plumbing (`signals`), the mixer
model and its algebra (`model`), a synthetic reference device (`oracle`),
the staged fitting procedure (`fit`), the radar processing chain
(`radar`), and a command-line front end (`cli`).
"""

__version__ = "0.1.0"

from .errors import (AlignmentError, BandOverlapError, BoundViolationError,
                     CombmixError, EvenOrderError, GridMismatchError,
                     InsufficientPointsError, LengthMismatchError,
                     MaskCoversMapError, MissingPhasePolynomialError,
                     NonCommensurateError, NoProgressWarning,
                     OffGridProductError, RateMismatchError,
                     RateNotMultipleError, SchemaError, SchemaMismatchError,
                     UndersampledError, ZeroPowerError, ZeroTxSymbolError)
from .fit import (BinSets, FitConfig, FitReport, default_bin_sets,
                  fit_core, fit_phase, fit_sidebranch, report_to_document,
                  run_algorithm1, select_bins, spectral_loss)
from .model import (FundamentalMap, MixerModel, PhasePolynomial,
                    PolynomialBlock, apply_phase, enumerate_products,
                    eval_mixer, eval_poly, extract_p1db, fundamental_map,
                    load_model, model_from_document, model_to_document,
                    save_model, sweep_am_am)
from .oracle import (ReferenceDataset, SurrogateDevice, characterize,
                     load_reference_csv, load_surrogate, save_reference_csv,
                     save_surrogate, surrogate_eval)
from .radar import (RadarMetrics, RadarScenario, RangeDopplerMap, Target,
                    apply_channel, comb_upconvert, downconvert_and_demod,
                    image_metrics, range_doppler, run_scenario)
from .signals import (OfdmFrame, OfdmFrameConfig, SampledSignal, Spectrum,
                      Tone, ToneSet, analytic_signal, compute_papr,
                      compute_spectrum, demodulate_frame, frame_papr,
                      generate_ofdm_frame, input_power_dbm,
                      interpolate_complex, load_signal_csv, load_spectrum_csv,
                      save_signal_csv, save_spectrum_csv, synth_multitone,
                      tone_set, upconvert_to_if)
