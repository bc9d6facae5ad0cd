"""mtwlab: numerical laboratory for cost cross-curvature classification,
exact discrete optimal transport, and quantitative regularity estimates."""

from .cost_model import (
    CostConstants,
    CostModel,
    CurvatureReport,
    DomainBox,
    ZOO_KEYS,
    classify_cost,
    compute_constants,
    cross_derivative,
    load_custom_cost,
    make_cost,
    mtw_tensor,
)
from .charts import ExpChart, TransformedPotential, renormalize, transform_potential
from .convex_geometry import (
    ConvexBody,
    Ellipsoid,
    dilate,
    dual_norm,
    john_ellipsoid,
    slice_projection_bound,
    strong_convexity_radius,
    supporting_distance,
    supporting_distance_constant,
)
from .transport import (
    DiscreteMeasure,
    KantorovichSolution,
    ProblemSpec,
    TransportMap,
    boundary_mixing_check,
    c_subdifferential,
    c_transform,
    cma_measure,
    contact_cell_partners,
    dasm_check,
    dasm_sweep,
    ma_density_pde,
    recover_map,
    solve_kantorovich,
)
from .estimates import (
    CConeData,
    EstimateReport,
    SectionData,
    alexandrov_lower,
    alexandrov_upper,
    c_cone,
    cone_mass_bound,
    dual_norm_gradient_bound,
    dual_norm_paper_constant,
    gradient_direction_lipschitz,
    levelset_defect,
    load_frozen_constants,
    section,
)
from .regularity import (
    EngulfingReport,
    HolderReport,
    engulfing_constant,
    holder_fit,
    injectivity_check,
    monotonicity_gain,
    section_shrink,
)

__version__ = "0.1.0"
