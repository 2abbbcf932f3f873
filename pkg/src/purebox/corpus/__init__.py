from purebox.corpus.acquire import acquire_images, acquire_many, find_image, image_path
from purebox.corpus.classes import (
    CANONICAL_CLASSES,
    GENERATOR_CLASS_COUNT,
    ClassSpec,
    classes_by_id,
    label_map,
    select_class_subset,
    validate_class_list,
)
from purebox.corpus.dataset import ImageSample, LabeledSet, load_pixels, load_split, one_vs_all
from purebox.corpus.manifest import (
    Manifest,
    ManifestEntry,
    accept_all,
    content_hash,
    curate,
    load_verdicts,
    save_verdicts,
    split_dataset,
)
from purebox.corpus.sources import (
    HttpSource,
    LocalDirectorySource,
    MemorySource,
    RawImage,
    SourceAdapter,
    SyntheticSource,
    concept_for,
    encode_png,
    render_synthetic,
)
