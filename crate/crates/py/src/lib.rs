//! Python bindings: clips and VSGC I/O, label expansion, corpus rendering,
//! trained generators and classifiers, FID and Poisson blending.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use vispgan::blend::{blend_clip, BlendRegion, DEFAULT_TOL};
use vispgan::chargrid::{self, Alphabet, ENGLISH_LOWERCASE};
use vispgan::eval::{compute_feature_stats, fid_score};
use vispgan::synthcorpus::{generate_corpus, CorpusConfig};
use vispgan::trainer::{TrainedClassifier, TrainedGenerator};
use vispgan::vsgc::{read_clip, write_clip, DType};
use vispgan::{Error, VideoClip};

fn py_err(e: Error) -> PyErr {
    if e.is_user_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// A `T × H × W × C` clip with values in [-1, 1], stored row-major.
#[pyclass(name = "Clip", module = "vispgan_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyClip {
    inner: VideoClip,
}

#[pymethods]
impl PyClip {
    #[new]
    fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> PyResult<Self> {
        Ok(PyClip {
            inner: VideoClip::new(frames, height, width, channels, data).map_err(py_err)?,
        })
    }

    /// (frames, height, width, channels)
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let [t, h, w, c] = self.inner.dims();
        (t, h, w, c)
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn frame(&self, t: usize) -> PyResult<Vec<f32>> {
        if t >= self.inner.frames() {
            return Err(py_err(Error::IndexOutOfRange {
                index: t,
                size: self.inner.frames(),
            }));
        }
        Ok(self.inner.frame(t).to_vec())
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyClip {
            inner: read_clip(&path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_clip(&path, &self.inner, DType::F32).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Clip{:?}", self.inner.dims())
    }
}

/// A trained translation generator loaded from a GAN checkpoint.
#[pyclass(name = "Generator", module = "vispgan_py", unsendable)]
pub struct PyGenerator {
    inner: TrainedGenerator,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyGenerator {
            inner: TrainedGenerator::load(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.name()
    }

    #[getter]
    fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary.words().to_vec()
    }

    fn translate(&self, clip: &PyClip, word: &str) -> PyResult<PyClip> {
        let target = self.inner.vocabulary.index_of(word).ok_or_else(|| {
            PyValueError::new_err(format!("word {word:?} is not in the vocabulary"))
        })?;
        Ok(PyClip {
            inner: self.inner.translate(&clip.inner, target).map_err(py_err)?,
        })
    }
}

/// A trained word classifier.
#[pyclass(name = "Classifier", module = "vispgan_py", unsendable)]
pub struct PyClassifier {
    inner: TrainedClassifier,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyClassifier {
            inner: TrainedClassifier::load(&path).map_err(py_err)?,
        })
    }

    /// Most probable word per clip.
    fn predict(&self, clips: Vec<PyRef<'_, PyClip>>) -> PyResult<Vec<String>> {
        let refs: Vec<&VideoClip> = clips.iter().map(|c| &c.inner).collect();
        let idx = self.inner.predict(&refs).map_err(py_err)?;
        idx.into_iter()
            .map(|i| Ok(self.inner.vocabulary.word(i).map_err(py_err)?.to_string()))
            .collect()
    }

    fn features(&self, clips: Vec<PyRef<'_, PyClip>>) -> PyResult<Vec<Vec<f64>>> {
        let refs: Vec<&VideoClip> = clips.iter().map(|c| &c.inner).collect();
        self.inner.features(&refs).map_err(py_err)
    }
}

fn alphabet(symbols: Option<&str>) -> PyResult<Alphabet> {
    Alphabet::new(symbols.unwrap_or(ENGLISH_LOWERCASE)).map_err(py_err)
}

/// Per-frame alphabet indices of `word` spread over `frames` frames.
#[pyfunction]
#[pyo3(signature = (word, frames, alphabet_symbols = None))]
fn expand_characters(
    word: &str,
    frames: usize,
    alphabet_symbols: Option<&str>,
) -> PyResult<Vec<usize>> {
    let a = alphabet(alphabet_symbols)?;
    Ok(chargrid::expand_characters(word, frames, &a)
        .map_err(py_err)?
        .labels)
}

/// Frames per character for `n` characters over `frames` frames.
#[pyfunction]
fn run_lengths(n: usize, frames: usize) -> Vec<usize> {
    chargrid::run_lengths(n, frames)
}

/// The clip with one spatially constant one-hot channel per alphabet
/// character appended, as `((T, H, W, C + A), flat data)`.
#[pyfunction]
#[pyo3(signature = (clip, word, alphabet_symbols = None))]
#[allow(clippy::type_complexity)]
fn conditioning_volume(
    clip: &PyClip,
    word: &str,
    alphabet_symbols: Option<&str>,
) -> PyResult<((usize, usize, usize, usize), Vec<f32>)> {
    let a = alphabet(alphabet_symbols)?;
    let labels = chargrid::expand_characters(word, clip.inner.frames(), &a).map_err(py_err)?;
    let vol = chargrid::build_conditioning_volume(&clip.inner, &labels).map_err(py_err)?;
    Ok((
        (vol.frames, vol.height, vol.width, vol.channels()),
        vol.data,
    ))
}

/// Renders the desk corpus into `out_dir`; returns the clip count.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0))]
fn make_desk_corpus(out_dir: PathBuf, seed: u64) -> PyResult<usize> {
    let cfg = CorpusConfig {
        seed,
        ..CorpusConfig::desk()
    };
    Ok(generate_corpus(&cfg, &out_dir)
        .map_err(py_err)?
        .records
        .len())
}

/// Fréchet distance between Gaussians fitted to two feature sets.
#[pyfunction]
fn fid(real: Vec<Vec<f64>>, fake: Vec<Vec<f64>>) -> PyResult<f64> {
    let r = compute_feature_stats(&real).map_err(py_err)?;
    let f = compute_feature_stats(&fake).map_err(py_err)?;
    fid_score(&r, &f).map_err(py_err)
}

/// Poisson-blends `generated` into `original` inside each frame's
/// `(top, left, height, width)` rectangle.
#[pyfunction]
#[pyo3(signature = (original, generated, regions, tol = DEFAULT_TOL))]
fn blend(
    original: &PyClip,
    generated: &PyClip,
    regions: HashMap<usize, (usize, usize, usize, usize)>,
    tol: f64,
) -> PyResult<PyClip> {
    let regions: BTreeMap<usize, BlendRegion> = regions
        .into_iter()
        .map(|(t, (top, left, h, w))| (t, BlendRegion::rect(top, left, h, w)))
        .collect();
    Ok(PyClip {
        inner: blend_clip(&original.inner, &generated.inner, &regions, tol).map_err(py_err)?,
    })
}

#[pymodule]
fn vispgan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClip>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(expand_characters, m)?)?;
    m.add_function(wrap_pyfunction!(run_lengths, m)?)?;
    m.add_function(wrap_pyfunction!(conditioning_volume, m)?)?;
    m.add_function(wrap_pyfunction!(make_desk_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(fid, m)?)?;
    m.add_function(wrap_pyfunction!(blend, m)?)?;
    Ok(())
}
