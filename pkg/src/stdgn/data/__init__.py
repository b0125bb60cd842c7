from stdgn.data.batching import Batch, StackedDataset, epoch_order, make_batches
from stdgn.data.modality import (
    broadcast_concat,
    encode_modality,
    is_one_hot,
    modality_difference,
    sample_target_modality,
)
from stdgn.data.phantom import (
    DomainStyle,
    PhantomParams,
    SiteSpec,
    generate_phantom_dataset,
    generate_phantom_splits,
)
from stdgn.data.preprocess import center_crop, heart_center, preprocess_slice, zscore_normalize
from stdgn.data.storage import DatasetLoadError, load_dataset, save_dataset
from stdgn.data.types import (
    CLASS_NAMES,
    NUM_CLASSES,
    STRUCTURES,
    DomainDataset,
    DomainInfo,
    ImageSlice,
    LabelMap,
    Phase,
    SliceRecord,
    slice_position,
)
