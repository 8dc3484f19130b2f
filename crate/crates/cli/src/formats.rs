//! Dataset readers and writers: CIFAR-10 binary, IDX, PNG class directories.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use augsearch::image::Image;
use augsearch::{Item, LabeledDataset};
use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, ImageFormat, ImageReader, RgbImage};
use thiserror::Error;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

const IDX_U8_3D: u32 = 0x0000_0803;
const IDX_U8_4D: u32 = 0x0000_0804;
const IDX_U8_1D: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: truncated at byte offset {offset} (expected {expected} more bytes)", .path.display())]
    Truncated { path: PathBuf, offset: u64, expected: u64 },
    #[error("{}: bad magic 0x{found:08x} at byte offset 0 (expected {expected})", .path.display())]
    BadMagic { path: PathBuf, found: u32, expected: &'static str },
    #[error("{}: label {label} out of range at byte offset {offset} (must be < {classes})", .path.display())]
    LabelOutOfRange { path: PathBuf, label: u8, offset: u64, classes: usize },
    #[error("{}: image is {found:?} but earlier images are {expected:?}", .path.display())]
    MixedSizes { path: PathBuf, expected: (usize, usize), found: (usize, usize) },
    #[error("{}: {detail}", .path.display())]
    Unsupported { path: PathBuf, detail: String },
    #[error("{}: trailing bytes after offset {offset}", .path.display())]
    Trailing { path: PathBuf, offset: u64 },
    #[error("image and label counts differ: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Cifar10Bin,
    Idx,
    ImageDir,
}

impl DatasetFormat {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cifar10Bin => "cifar10-bin",
            Self::Idx => "idx",
            Self::ImageDir => "image-dir",
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetFormat {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cifar10-bin" => Ok(Self::Cifar10Bin),
            "idx" => Ok(Self::Idx),
            "image-dir" => Ok(Self::ImageDir),
            other => Err(FormatError::Invalid(format!("unknown dataset format '{other}' (expected cifar10-bin, idx or image-dir)"))),
        }
    }
}

/// `<format>:<path>`. For IDX the path is `<images>,<labels>`; a single path
/// containing `images` gets its labels file by substituting `labels` (and
/// `idx3`/`idx4` with `idx1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSource {
    pub format: DatasetFormat,
    pub path: PathBuf,
    pub labels: Option<PathBuf>,
    pub resize: Option<(usize, usize)>,
}

impl FromStr for DatasetSource {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (fmt, rest) = s
            .split_once(':')
            .ok_or_else(|| FormatError::Invalid(format!("dataset '{s}' must look like <format>:<path>")))?;
        let format: DatasetFormat = fmt.parse()?;
        if rest.is_empty() {
            return Err(FormatError::Invalid(format!("dataset '{s}' has an empty path")));
        }
        let (path, labels) = match (format, rest.split_once(',')) {
            (DatasetFormat::Idx, Some((images, labels))) => (PathBuf::from(images), Some(PathBuf::from(labels))),
            (DatasetFormat::Idx, None) => (PathBuf::from(rest), Some(idx_labels_path(Path::new(rest))?)),
            _ => (PathBuf::from(rest), None),
        };
        Ok(Self { format, path, labels, resize: None })
    }
}

fn idx_labels_path(images: &Path) -> Result<PathBuf, FormatError> {
    let name = images.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if !name.contains("images") {
        return Err(FormatError::Invalid(format!(
            "cannot infer the labels file for '{}'; pass idx:<images>,<labels>",
            images.display()
        )));
    }
    let labels = name.replace("images", "labels").replace("idx3", "idx1").replace("idx4", "idx1");
    Ok(images.with_file_name(labels))
}

/// Parses `WxH`, e.g. `32x32`.
pub fn parse_size(s: &str) -> Result<(usize, usize), FormatError> {
    let bad = || FormatError::Invalid(format!("size '{s}' must look like <width>x<height>"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

/// A loaded dataset plus the class names it came with.
#[derive(Clone, Debug, PartialEq)]
pub struct Loaded {
    pub data: LabeledDataset,
    pub class_names: Vec<String>,
}

fn numeric_names(n: usize) -> Vec<String> {
    (0..n).map(|c| c.to_string()).collect()
}

pub fn load_dataset(src: &DatasetSource) -> Result<Loaded, FormatError> {
    let mut loaded = match src.format {
        DatasetFormat::Cifar10Bin => {
            let bytes = fs::read(&src.path).map_err(io_err(&src.path))?;
            let data = parse_cifar(&bytes, &src.path)?;
            Loaded { data, class_names: numeric_names(CIFAR_CLASSES) }
        }
        DatasetFormat::Idx => {
            let labels_path = src.labels.clone().map_or_else(|| idx_labels_path(&src.path), Ok)?;
            let images = fs::read(&src.path).map_err(io_err(&src.path))?;
            let labels = fs::read(&labels_path).map_err(io_err(&labels_path))?;
            let data = parse_idx(&images, &src.path, &labels, &labels_path)?;
            let classes = data.class_count();
            Loaded { data, class_names: numeric_names(classes) }
        }
        DatasetFormat::ImageDir => read_image_dir(&src.path)?,
    };
    if let Some((w, h)) = src.resize {
        let items = loaded
            .data
            .items()
            .iter()
            .map(|it| Item { image: it.image.resize_bilinear(w, h), ..it.clone() })
            .collect();
        loaded.data = LabeledDataset::new(items, loaded.data.class_count()).map_err(|e| FormatError::Invalid(e.to_string()))?;
    }
    Ok(loaded)
}

fn dataset(pairs: Vec<(Image, usize)>, classes: usize, path: &Path) -> Result<LabeledDataset, FormatError> {
    if pairs.is_empty() {
        return Err(FormatError::Truncated { path: path.to_path_buf(), offset: 0, expected: 1 });
    }
    LabeledDataset::from_pairs(pairs, classes).map_err(|e| FormatError::Invalid(format!("{}: {e}", path.display())))
}

pub fn parse_cifar(bytes: &[u8], path: &Path) -> Result<LabeledDataset, FormatError> {
    let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
    if bytes.is_empty() || whole != bytes.len() {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            expected: (CIFAR_RECORD - (bytes.len() - whole)) as u64,
        });
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut pairs = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0];
        if usize::from(label) >= CIFAR_CLASSES {
            return Err(FormatError::LabelOutOfRange {
                path: path.to_path_buf(),
                label,
                offset: (r * CIFAR_RECORD) as u64,
                classes: CIFAR_CLASSES,
            });
        }
        let px = &rec[1..];
        let pixels = (0..plane).map(|i| [px[i], px[plane + i], px[2 * plane + i]]).collect();
        let img = Image::new(CIFAR_SIDE, CIFAR_SIDE, pixels).expect("32x32 record");
        pairs.push((img, usize::from(label)));
    }
    dataset(pairs, CIFAR_CLASSES, path)
}

pub fn encode_cifar(data: &LabeledDataset) -> Result<Vec<u8>, FormatError> {
    if data.image_size() != (CIFAR_SIDE, CIFAR_SIDE) {
        return Err(FormatError::Invalid(format!("cifar10-bin needs 32x32 images, got {:?}", data.image_size())));
    }
    if data.class_count() > CIFAR_CLASSES {
        return Err(FormatError::Invalid(format!("cifar10-bin holds at most 10 classes, got {}", data.class_count())));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for item in data.items() {
        out.push(item.label as u8);
        for ch in 0..3 {
            out.extend(item.image.pixels().iter().map(|p| p[ch]));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { cur: Cursor::new(bytes), path }
    }

    fn truncated(&self, expected: u64) -> FormatError {
        FormatError::Truncated { path: self.path.to_path_buf(), offset: self.cur.position(), expected }
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let left = self.remaining();
        self.cur.read_u32::<BigEndian>().map_err(|_| FormatError::Truncated {
            path: self.path.to_path_buf(),
            offset: self.cur.get_ref().len() as u64,
            expected: 4 - left,
        })
    }

    fn remaining(&self) -> u64 {
        self.cur.get_ref().len() as u64 - self.cur.position()
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n as u64 {
            return Err(FormatError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.cur.get_ref().len() as u64,
                expected: n as u64 - self.remaining(),
            });
        }
        let start = self.cur.position() as usize;
        self.cur.set_position((start + n) as u64);
        Ok(&self.cur.get_ref()[start..start + n])
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() > 0 {
            return Err(FormatError::Trailing { path: self.path.to_path_buf(), offset: self.cur.position() });
        }
        Ok(())
    }
}

/// IDX pair: images with magic 0x0803 (N x H x W, grayscale, replicated to
/// RGB) or 0x0804 (N x H x W x C, C in {1, 3}); labels with magic 0x0801.
/// The class count is one more than the largest label.
pub fn parse_idx(images: &[u8], images_path: &Path, labels: &[u8], labels_path: &Path) -> Result<LabeledDataset, FormatError> {
    let mut r = Reader::new(images, images_path);
    if images.is_empty() {
        return Err(r.truncated(4));
    }
    let magic = r.u32()?;
    let dims = match magic {
        IDX_U8_3D => 3,
        IDX_U8_4D => 4,
        found => return Err(FormatError::BadMagic { path: images_path.into(), found, expected: "0x00000803 or 0x00000804" }),
    };
    let mut shape = Vec::with_capacity(dims);
    for _ in 0..dims {
        shape.push(r.u32()? as usize);
    }
    let (n, h, w) = (shape[0], shape[1], shape[2]);
    let channels = if dims == 4 { shape[3] } else { 1 };
    if !matches!(channels, 1 | 3) {
        return Err(FormatError::Unsupported { path: images_path.into(), detail: format!("{channels} channels (expected 1 or 3)") });
    }
    if n > 0 && (w == 0 || h == 0) {
        return Err(FormatError::Unsupported { path: images_path.into(), detail: format!("zero-sized images {w}x{h}") });
    }
    let per = h * w * channels;
    let body = r.bytes(n * per)?;
    r.finish()?;

    let mut lr = Reader::new(labels, labels_path);
    if labels.is_empty() {
        return Err(lr.truncated(4));
    }
    let magic = lr.u32()?;
    if magic != IDX_U8_1D {
        return Err(FormatError::BadMagic { path: labels_path.into(), found: magic, expected: "0x00000801" });
    }
    let count = lr.u32()? as usize;
    if count != n {
        return Err(FormatError::CountMismatch { images: n, labels: count });
    }
    let label_bytes = lr.bytes(count)?;
    lr.finish()?;

    let classes = label_bytes.iter().map(|&l| usize::from(l) + 1).max().unwrap_or(0);
    let pairs = body
        .chunks_exact(per.max(1))
        .take(n)
        .zip(label_bytes)
        .map(|(chunk, &label)| {
            let pixels = chunk
                .chunks_exact(channels)
                .map(|c| if channels == 1 { [c[0]; 3] } else { [c[0], c[1], c[2]] })
                .collect();
            (Image::new(w, h, pixels).expect("shape checked"), usize::from(label))
        })
        .collect();
    dataset(pairs, classes, images_path)
}

/// Encodes an IDX pair. All-gray datasets use the 3-D grayscale layout so
/// grayscale inputs round-trip bit-exactly; otherwise 4-D with 3 channels.
pub fn encode_idx(data: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>), FormatError> {
    if data.class_count() > 256 {
        return Err(FormatError::Invalid(format!("idx labels are bytes; {} classes do not fit", data.class_count())));
    }
    let (w, h) = data.image_size();
    let gray = data.items().iter().all(|it| it.image.is_gray());
    let mut images = Vec::new();
    let n = data.len() as u32;
    if gray {
        images.write_u32::<BigEndian>(IDX_U8_3D).expect("vec write");
        for d in [n, h as u32, w as u32] {
            images.write_u32::<BigEndian>(d).expect("vec write");
        }
        for it in data.items() {
            images.extend(it.image.pixels().iter().map(|p| p[0]));
        }
    } else {
        images.write_u32::<BigEndian>(IDX_U8_4D).expect("vec write");
        for d in [n, h as u32, w as u32, 3] {
            images.write_u32::<BigEndian>(d).expect("vec write");
        }
        for it in data.items() {
            images.extend(it.image.pixels().iter().flatten());
        }
    }
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.write_u32::<BigEndian>(IDX_U8_1D).expect("vec write");
    labels.write_u32::<BigEndian>(n).expect("vec write");
    labels.extend(data.items().iter().map(|it| it.label as u8));
    Ok((images, labels))
}

/// Decodes one 8-bit RGB PNG; any other format or colour type is rejected.
pub fn read_png(path: &Path) -> Result<Image, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let unsupported = |detail: String| FormatError::Unsupported { path: path.to_path_buf(), detail };
    let format = image::guess_format(&bytes).map_err(|e| unsupported(e.to_string()))?;
    if format != ImageFormat::Png {
        return Err(unsupported(format!("{format:?} image (only PNG is accepted)")));
    }
    let decoded = ImageReader::with_format(Cursor::new(&bytes), ImageFormat::Png)
        .decode()
        .map_err(|e| unsupported(e.to_string()))?;
    match decoded {
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let pixels = rgb.pixels().map(|p| p.0).collect();
            Image::new(w, h, pixels).map_err(|e| unsupported(e.to_string()))
        }
        other => Err(unsupported(format!("colour type {:?} (only 8-bit RGB is accepted)", other.color()))),
    }
}

pub fn write_png(img: &Image, path: &Path) -> Result<(), FormatError> {
    let raw: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| FormatError::Unsupported { path: path.to_path_buf(), detail: e.to_string() })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, FormatError> {
    let mut entries = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    entries.sort();
    Ok(entries)
}

/// One subdirectory per class (sorted by name; the name is the class label),
/// each holding `.png` files read in name order.
pub fn read_image_dir(root: &Path) -> Result<Loaded, FormatError> {
    let mut class_names = Vec::new();
    let mut pairs = Vec::new();
    let mut size: Option<(usize, usize)> = None;
    for class_dir in sorted_entries(root)? {
        if !class_dir.is_dir() {
            return Err(FormatError::Unsupported {
                path: class_dir,
                detail: "unexpected file at the top level (expected one directory per class)".into(),
            });
        }
        let label = class_names.len();
        class_names.push(class_dir.file_name().expect("entry has a name").to_string_lossy().into_owned());
        for file in sorted_entries(&class_dir)? {
            let is_png = file.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if !is_png {
                return Err(FormatError::Unsupported { path: file, detail: "not a .png file".into() });
            }
            let img = read_png(&file)?;
            let dims = (img.width(), img.height());
            match size {
                Some(expected) if expected != dims => {
                    return Err(FormatError::MixedSizes { path: file, expected, found: dims });
                }
                _ => size = Some(dims),
            }
            pairs.push((img, label));
        }
    }
    if class_names.is_empty() {
        return Err(FormatError::Invalid(format!("{}: no class directories", root.display())));
    }
    let data = dataset(pairs, class_names.len(), root)?;
    Ok(Loaded { data, class_names })
}

pub fn write_image_dir(loaded: &Loaded, root: &Path) -> Result<(), FormatError> {
    let data = &loaded.data;
    if loaded.class_names.len() < data.class_count() {
        return Err(FormatError::Invalid("fewer class names than classes".into()));
    }
    let mut next = vec![0usize; data.class_count()];
    for c in 0..data.class_count() {
        let dir = root.join(&loaded.class_names[c]);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    for item in data.items() {
        let file = root.join(&loaded.class_names[item.label]).join(format!("{:06}.png", next[item.label]));
        next[item.label] += 1;
        write_png(&item.image, &file)?;
    }
    Ok(())
}

/// Where [`write_dataset`] puts a dataset of `format` under `stem`.
pub fn output_source(format: DatasetFormat, stem: &Path) -> DatasetSource {
    let with_suffix = |s: &str| {
        let mut name = stem.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(s);
        stem.with_file_name(name)
    };
    match format {
        DatasetFormat::Cifar10Bin => DatasetSource { format, path: with_suffix(".bin"), labels: None, resize: None },
        DatasetFormat::Idx => DatasetSource {
            format,
            path: with_suffix("-images-idx-ubyte"),
            labels: Some(with_suffix("-labels-idx1-ubyte")),
            resize: None,
        },
        DatasetFormat::ImageDir => DatasetSource { format, path: stem.to_path_buf(), labels: None, resize: None },
    }
}

pub fn write_dataset(loaded: &Loaded, dest: &DatasetSource) -> Result<(), FormatError> {
    let write = |path: &Path, bytes: &[u8]| fs::write(path, bytes).map_err(io_err(path));
    match dest.format {
        DatasetFormat::Cifar10Bin => write(&dest.path, &encode_cifar(&loaded.data)?),
        DatasetFormat::Idx => {
            let (images, labels) = encode_idx(&loaded.data)?;
            write(&dest.path, &images)?;
            let labels_path = dest.labels.clone().map_or_else(|| idx_labels_path(&dest.path), Ok)?;
            write(&labels_path, &labels)
        }
        DatasetFormat::ImageDir => write_image_dir(loaded, &dest.path),
    }
}
