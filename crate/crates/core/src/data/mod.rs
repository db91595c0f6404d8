//! Dataset container, directory-per-class ingestion, and bilinear resizing.

pub mod ppm;
pub mod synth;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image with its class id. Pixels are `[3, H, W]` planar RGB in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
    /// File of origin; `None` for generated images.
    pub source: Option<PathBuf>,
}

/// An in-memory labeled image collection with a fixed class registry.
/// All images share one shape; class ids index `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<LabeledImage>,
    class_names: Vec<String>,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        for (i, a) in class_names.iter().enumerate() {
            if class_names[..i].contains(a) {
                return Err(Error::Dataset(format!("duplicate class name {a:?}")));
            }
        }
        let by_class = vec![Vec::new(); class_names.len()];
        Ok(Dataset {
            images: Vec::new(),
            class_names,
            by_class,
        })
    }

    /// Appends one image, checking label range, pixel range, and that its
    /// shape matches the images already present.
    pub fn push(&mut self, pixels: Tensor, label: usize, source: Option<PathBuf>) -> Result<()> {
        if label >= self.class_names.len() {
            return Err(Error::Dataset(format!(
                "label {label} outside the {}-class registry",
                self.class_names.len()
            )));
        }
        if pixels.rank() != 3 || pixels.shape()[0] != 3 {
            return Err(Error::Dimension(format!(
                "image must be [3, H, W], got {:?}",
                pixels.shape()
            )));
        }
        if let Some(first) = self.images.first() {
            if first.pixels.shape() != pixels.shape() {
                return Err(Error::Dimension(format!(
                    "image shape {:?} differs from the dataset's {:?}",
                    pixels.shape(),
                    first.pixels.shape()
                )));
            }
        }
        if !pixels.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Dataset(match &source {
                Some(p) => format!("pixel values outside [0,1] in {}", p.display()),
                None => "pixel values outside [0,1]".into(),
            }));
        }
        self.by_class[label].push(self.images.len());
        self.images.push(LabeledImage {
            pixels,
            label,
            source,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn image(&self, i: usize) -> &LabeledImage {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.images[i].label
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|im| im.label).collect()
    }

    /// `[C, H, W]` of the stored images, if any.
    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.images.first().map(|im| {
            let s = im.pixels.shape();
            [s[0], s[1], s[2]]
        })
    }

    /// Stacks the given images into a `[B, C, H, W]` batch.
    pub fn batch_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::Contract("batch_tensor on zero indices".into()));
        }
        let shape = self
            .image_shape()
            .ok_or_else(|| Error::Dataset("batch_tensor on an empty dataset".into()))?;
        let per = shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            let im = self.images.get(i).ok_or_else(|| {
                Error::Contract(format!("image index {i} out of range ({})", self.len()))
            })?;
            data.extend_from_slice(im.pixels.data());
        }
        Tensor::new(vec![indices.len(), shape[0], shape[1], shape[2]], data)
    }

    /// New dataset with the same class registry holding only these images.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut out = Dataset::new(self.class_names.clone())?;
        for &i in indices {
            let im = self.images.get(i).ok_or_else(|| {
                Error::Contract(format!("image index {i} out of range ({})", self.len()))
            })?;
            out.push(im.pixels.clone(), im.label, im.source.clone())?;
        }
        Ok(out)
    }

    /// Dataset containing only the listed classes, renumbered to a fresh
    /// registry in the given order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Dataset> {
        let mut names = Vec::with_capacity(classes.len());
        for &c in classes {
            let name = self
                .class_names
                .get(c)
                .ok_or_else(|| Error::Contract(format!("class {c} out of range")))?;
            names.push(name.clone());
        }
        let mut out = Dataset::new(names)?;
        for (new_label, &c) in classes.iter().enumerate() {
            for &i in self.class_members(c) {
                let im = &self.images[i];
                out.push(im.pixels.clone(), new_label, im.source.clone())?;
            }
        }
        Ok(out)
    }
}

/// Loads `<root>/<class_name>/<image files>`, classes and files in sorted
/// order. Images are resized to `target` (height, width) when given.
pub fn load_dataset_dir(root: &Path, target: Option<(usize, usize)>) -> Result<Dataset> {
    let mut class_dirs: Vec<PathBuf> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root.to_path_buf(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root.to_path_buf(), e))?;
        let path = entry.path();
        if path.is_dir() {
            class_dirs.push(path);
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "{} has no class subdirectories",
            root.display()
        )));
    }
    class_dirs.sort();
    let names = class_dirs
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| Error::Dataset(format!("unnamed directory {}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dataset = Dataset::new(names)?;
    for (label, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir.clone(), e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir.clone(), e))?;
        files.retain(|p| p.is_file());
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory {} has no images",
                dir.display()
            )));
        }
        for file in files {
            let mut pixels = decode_image_file(&file)?;
            if let Some((h, w)) = target {
                pixels = resize_bilinear(&pixels, h, w)?;
            }
            dataset.push(pixels, label, Some(file))?;
        }
    }
    Ok(dataset)
}

/// Decodes one image file to `[3, H, W]` in [0,1], optionally resizing.
pub fn load_image(path: impl AsRef<Path>, target: Option<(usize, usize)>) -> Result<Tensor> {
    let pixels = decode_image_file(path.as_ref())?;
    match target {
        Some((h, w)) => resize_bilinear(&pixels, h, w),
        None => Ok(pixels),
    }
}

fn decode_image_file(path: &Path) -> Result<Tensor> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
            ppm::decode_ppm(&bytes)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        #[cfg(feature = "png")]
        "png" => decode_png_file(path),
        _ => Err(Error::Format(format!(
            "{}: unsupported image format ({})",
            path.display(),
            supported_formats()
        ))),
    }
}

fn supported_formats() -> &'static str {
    if cfg!(feature = "png") {
        "supported: ppm, png"
    } else {
        "supported: ppm"
    }
}

#[cfg(feature = "png")]
fn decode_png_file(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("{}: empty image", path.display())));
    }
    let raw = img.into_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] = raw[(y * w + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Bilinear resample of a `[C, H, W]` image to `[C, out_h, out_w]` using the
/// half-pixel-center convention with edge clamping.
pub fn resize_bilinear(pixels: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if pixels.rank() != 3 {
        return Err(Error::Dimension(format!(
            "resize expects [C, H, W], got {:?}",
            pixels.shape()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize target must be positive".into()));
    }
    let (c, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
    if h == out_h && w == out_w {
        return Ok(pixels.clone());
    }
    let src = pixels.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            for ch in 0..c {
                let at = |y: usize, x: usize| src[ch * h * w + y * w + x];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[ch * out_h * out_w + oy * out_w + ox] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(r: f32, g: f32, b: f32, h: usize, w: usize) -> Tensor {
        let mut data = Vec::with_capacity(3 * h * w);
        for v in [r, g, b] {
            data.extend(std::iter::repeat(v).take(h * w));
        }
        Tensor::new(vec![3, h, w], data).unwrap()
    }

    #[test]
    fn push_and_batch() {
        let mut d = Dataset::new(vec!["a".into(), "b".into()]).unwrap();
        d.push(solid(1.0, 0.0, 0.0, 2, 2), 0, None).unwrap();
        d.push(solid(0.0, 1.0, 0.0, 2, 2), 1, None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.class_members(0), &[0]);
        assert_eq!(d.class_members(1), &[1]);
        let b = d.batch_tensor(&[1, 0]).unwrap();
        assert_eq!(b.shape(), &[2, 3, 2, 2]);
        assert_eq!(b.data()[0], 0.0); // first image in batch is image 1 (green)
        assert_eq!(b.data()[4], 1.0);
    }

    #[test]
    fn push_rejects_bad_inputs() {
        let mut d = Dataset::new(vec!["a".into()]).unwrap();
        assert!(d.push(solid(0.5, 0.5, 0.5, 2, 2), 1, None).is_err());
        assert!(d
            .push(Tensor::zeros(vec![1, 2, 2]), 0, None)
            .is_err());
        assert!(d
            .push(Tensor::new(vec![3, 1, 1], vec![1.5, 0.0, 0.0]).unwrap(), 0, None)
            .is_err());
        d.push(solid(0.0, 0.0, 0.0, 2, 2), 0, None).unwrap();
        // conflicting shape
        assert!(d.push(solid(0.0, 0.0, 0.0, 4, 4), 0, None).is_err());
    }

    #[test]
    fn duplicate_class_names_rejected() {
        assert!(Dataset::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn subset_keeps_registry_and_select_renumbers() {
        let mut d = Dataset::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        for label in [0, 1, 2, 1] {
            d.push(solid(0.1, 0.2, 0.3, 2, 2), label, None).unwrap();
        }
        let s = d.subset(&[1, 3]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.class_names().len(), 3);
        assert_eq!(s.class_members(1), &[0, 1]);

        let sel = d.select_classes(&[2, 1]).unwrap();
        assert_eq!(sel.class_names(), &["c".to_string(), "b".to_string()]);
        assert_eq!(sel.len(), 3);
        assert_eq!(sel.label(0), 0); // the single "c" image
        assert_eq!(sel.class_members(1).len(), 2);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = solid(0.25, 0.5, 0.75, 4, 4);
        assert_eq!(resize_bilinear(&img, 4, 4).unwrap(), img);
        let up = resize_bilinear(&img, 7, 5).unwrap();
        assert_eq!(up.shape(), &[3, 7, 5]);
        for (i, v) in up.data().iter().enumerate() {
            let want = [0.25, 0.5, 0.75][i / 35];
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_matches_hand_computed_ramp() {
        // one row [0, 1] widened to three columns under half-pixel centers:
        // targets map to source x = -1/6 (clamp 0), 1/2, 7/6 (clamp 1)
        let img = Tensor::new(vec![3, 1, 2], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 1, 3).unwrap();
        for ch in 0..3 {
            let row = &out.data()[ch * 3..(ch + 1) * 3];
            assert!((row[0] - 0.0).abs() < 1e-6);
            assert!((row[1] - 0.5).abs() < 1e-6);
            assert!((row[2] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn load_dataset_dir_sorted_and_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        for (class, shade) in [("b_class", 200u8), ("a_class", 10u8)] {
            let dir = root.join(class);
            std::fs::create_dir(&dir).unwrap();
            for name in ["y.ppm", "x.ppm"] {
                let img = solid(shade as f32 / 255.0, 0.0, 0.0, 2, 2);
                std::fs::write(dir.join(name), ppm::encode_ppm(&img).unwrap()).unwrap();
            }
        }
        let d = load_dataset_dir(root, None).unwrap();
        assert_eq!(
            d.class_names(),
            &["a_class".to_string(), "b_class".to_string()]
        );
        assert_eq!(d.len(), 4);
        // files within a class come back sorted
        let first = d.image(0).source.as_ref().unwrap();
        assert!(first.ends_with("a_class/x.ppm"));
        let again = load_dataset_dir(root, None).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn load_dataset_dir_resizes() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("only");
        std::fs::create_dir(&dir).unwrap();
        let img = solid(0.2, 0.4, 0.6, 8, 6);
        std::fs::write(dir.join("i.ppm"), ppm::encode_ppm(&img).unwrap()).unwrap();
        let d = load_dataset_dir(tmp.path(), Some((4, 4))).unwrap();
        assert_eq!(d.image_shape(), Some([3, 4, 4]));
    }

    #[test]
    fn load_dataset_dir_error_cases() {
        let tmp = tempfile::tempdir().unwrap();
        // no class subdirectories
        assert!(matches!(
            load_dataset_dir(tmp.path(), None),
            Err(Error::Dataset(_))
        ));
        // empty class directory
        std::fs::create_dir(tmp.path().join("empty")).unwrap();
        assert!(matches!(
            load_dataset_dir(tmp.path(), None),
            Err(Error::Dataset(_))
        ));
        // unsupported extension
        let tmp2 = tempfile::tempdir().unwrap();
        let dir = tmp2.path().join("c");
        std::fs::create_dir(&dir).unwrap();
        std::fs::write(dir.join("img.jpeg"), b"not an image").unwrap();
        let err = load_dataset_dir(tmp2.path(), None).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("ppm"));
    }
}
