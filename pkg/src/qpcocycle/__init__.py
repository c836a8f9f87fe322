"""Fast iteration of matrix cocycles over torus rotations.

Fields on the torus, doubling and continued-fraction renormalization,
rank-one bundle extraction and reduction to constants.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CocycleError,
    ConfigError,
    IllConditionedError,
    InvalidInputError,
    LevelBudgetError,
    NoDominantBundleError,
    NonconstantSignError,
    NumericOverflowError,
    ResonanceError,
    SingularMatrixError,
)
from .fields import (  # noqa: E402
    GridSpec,
    MatrixField,
    ProductStrategy,
    RotationVector,
    ScalarField,
    ShiftStrategy,
    evaluate,
    pointwise_product,
    shift,
    to_grid,
    to_spectral,
)
from .iteration import (  # noqa: E402
    ContinuedFraction,
    IterationResult,
    QRField,
    Strategy,
    continued_fraction_expand,
    direct_cocycle,
    direct_cocycle_log,
    direct_lyapunov,
    double_step,
    iterate_cf,
    iterate_fast,
    iterate_qr,
    qr_decompose_field,
    qr_double_step,
)
from .bundles import (  # noqa: E402
    BundleSection,
    StraddleReport,
    detect_straddle,
    extract_unstable,
    invariance_residual,
    precondition,
)
from .reduction import ReducedForm, SignCharacter, reduce_rank1, solve_cohomological  # noqa: E402
from .generators import (  # noqa: E402
    GeneratorKind,
    GeneratorSpec,
    make_conjugated_constant,
    make_constant,
    make_near_constant,
    make_nonorientable,
    make_schrodinger,
)
