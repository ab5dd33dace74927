"""nfmb: near-field multi-bounce MIMO channel workbench.

Synthesizes spherical-wavefront measurement tensors from parametric indoor
scenes and recovers scatterer locations with a graph-dictionary alternating
estimator, including the one-bounce-only baseline that demonstrates ghost
scatterers.
"""

from .constants import C
from .geometry import (
    ArraySpec,
    Box,
    DegenerateGeometryError,
    PathGeometry,
    PerElementGeometry,
    Pose,
    aperture_diameter,
    element_geometry,
    element_positions,
    path_geometry,
    per_element_delay,
    per_element_distance,
    per_element_orientation,
    rayleigh_distance,
    reference_position,
    sns_amplitude,
    vec3,
)
from .channel import (
    ISOTROPIC,
    AntennaPattern,
    ChannelTensor,
    DimensionMismatchError,
    PathCoefficients,
    WaveformSpec,
    col_of,
    doppler_frequency,
    path_signature,
    row_of,
    subband_frame_of,
    synthesize_channel,
    tx_rx_of,
)
from .tensorio import TensorFormatError, load_tensor, save_tensor
from .scene import (
    GroundTruthPath,
    Scatterer,
    SceneConfig,
    SceneFormatError,
    Wall,
    demo_scene,
    image_method_paths,
    load_scene,
    mirror_image,
    save_scene,
    scatterer_chain_paths,
)
from .dictionary import (
    AtomStream,
    CandidateGrid,
    CapacityError,
    DictionaryAtom,
    GraphConstraints,
    PropagationGraph,
    atom,
    build_graph,
    build_grid,
    dictionary_stream,
)
from .estimator import (
    DetectedPath,
    EstimateReport,
    EstimatorConfig,
    estimates_from_csv,
    estimates_to_csv,
    evaluate,
    gm_sage,
    match_atom,
    one_bounce_baseline,
    sage_pass,
)

__version__ = "0.1.0"
