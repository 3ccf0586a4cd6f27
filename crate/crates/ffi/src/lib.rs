//! C ABI over `est-lab`: opaque model and dataset handles, integer status
//! codes and a per-thread last-error message.
//!
//! Every function returning [`EstlStatus`] writes its results through out
//! pointers and leaves them untouched on failure. Handles are owned by the
//! caller and released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use est_lab::checkpoint;
use est_lab::model::{named_config, Model};
use est_lab::stream::{generate, Dataset, Split, Task, TaskConfig};
use est_lab::Error;

/// Result of a fallible call. `ESTL_OK` is zero; everything else is an error
/// whose text is available from `estl_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstlStatus {
    EstlOk = 0,
    EstlNullPointer = 1,
    EstlInvalidArgument = 2,
    EstlConfig = 3,
    EstlData = 4,
    EstlIo = 5,
    EstlFormat = 6,
    EstlCapacity = 7,
    EstlRuntime = 8,
    EstlPanic = 9,
}

/// Which part of a generated dataset to read.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstlSplit {
    EstlTrain = 0,
    EstlValid = 1,
    EstlTest = 2,
}

/// A trained or freshly initialised model with its streaming state.
pub struct EstlModel {
    model: Model,
}

/// The train/valid/test splits of one benchmark task.
pub struct EstlDataset {
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(e: &Error) -> EstlStatus {
    match e {
        Error::Config(_) => EstlStatus::EstlConfig,
        Error::Usage(_) | Error::Dimension { .. } => EstlStatus::EstlInvalidArgument,
        Error::Data { .. } => EstlStatus::EstlData,
        Error::Io { .. } => EstlStatus::EstlIo,
        Error::Format(_) => EstlStatus::EstlFormat,
        Error::Capacity { .. } => EstlStatus::EstlCapacity,
        _ => EstlStatus::EstlRuntime,
    }
}

struct Fail(EstlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EstlStatus::EstlNullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(EstlStatus::EstlInvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EstlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EstlStatus::EstlOk
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            EstlStatus::EstlPanic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(p: *const EstlModel) -> Result<&'a EstlModel, Fail> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn model_mut<'a>(p: *mut EstlModel) -> Result<&'a mut EstlModel, Fail> {
    p.as_mut().ok_or_else(|| null("model"))
}

unsafe fn dataset_ref<'a>(p: *const EstlDataset) -> Result<&'a EstlDataset, Fail> {
    p.as_ref().ok_or_else(|| null("dataset"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn estl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn estl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a published configuration (e.g. "est-1-1k") for the given input
/// and output widths, initialised from `seed`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn estl_model_new(
    name: *const c_char,
    input_dim: usize,
    output_dim: usize,
    seed: u64,
    out: *mut *mut EstlModel,
) -> EstlStatus {
    guard(|| {
        let named = named_config(text(name, "name")?)?;
        if input_dim == 0 || output_dim == 0 {
            return Err(invalid("input_dim and output_dim must be positive"));
        }
        let cfg = named.config.with_io(input_dim, output_dim).with_seed(seed);
        let mut model = Model::new(&cfg)?;
        model.reset_state();
        write_out(out, Box::into_raw(Box::new(EstlModel { model })), "out")
    })
}

/// Loads a checkpoint written by `est-lab train` or `estl_model_save`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn estl_model_load(
    path: *const c_char,
    out: *mut *mut EstlModel,
) -> EstlStatus {
    guard(|| {
        let mut model = checkpoint::load(&PathBuf::from(text(path, "path")?))?;
        model.reset_state();
        write_out(out, Box::into_raw(Box::new(EstlModel { model })), "out")
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn estl_model_save(
    model: *const EstlModel,
    path: *const c_char,
) -> EstlStatus {
    guard(|| {
        let m = model_ref(model)?;
        checkpoint::save(&m.model, &PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn estl_model_free(model: *mut EstlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Clears the streaming state.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn estl_model_reset(model: *mut EstlModel) -> EstlStatus {
    guard(|| {
        model_mut(model)?.model.reset_state();
        Ok(())
    })
}

/// Writes the trainable parameter count and the input/output widths.
/// Any out pointer may be null.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn estl_model_info(
    model: *const EstlModel,
    num_params: *mut usize,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> EstlStatus {
    guard(|| {
        let m = &model_ref(model)?.model;
        let (i, o) = m.config().io();
        if !num_params.is_null() {
            num_params.write(m.num_params());
        }
        if !input_dim.is_null() {
            input_dim.write(i);
        }
        if !output_dim.is_null() {
            output_dim.write(o);
        }
        Ok(())
    })
}

/// Feeds one token and writes the model output for it.
///
/// # Safety
/// `input` must hold `input_len` values and `output` room for `output_len`.
#[no_mangle]
pub unsafe extern "C" fn estl_model_step(
    model: *mut EstlModel,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> EstlStatus {
    guard(|| {
        let m = &mut model_mut(model)?.model;
        let (i, o) = m.config().io();
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        if input_len != i || output_len != o {
            return Err(invalid(format!(
                "model takes {i} inputs and gives {o} outputs, got buffers of {input_len} and {output_len}"
            )));
        }
        let y = m.forward_step(std::slice::from_raw_parts(input, input_len))?;
        std::slice::from_raw_parts_mut(output, output_len).copy_from_slice(&y);
        Ok(())
    })
}

/// Generates a benchmark task at its published settings from `seed`.
/// Sequential MNIST reads its files from `EST_LAB_DATA_DIR`.
///
/// # Safety
/// `task` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn estl_dataset_generate(
    task: *const c_char,
    seed: u64,
    out: *mut *mut EstlDataset,
) -> EstlStatus {
    guard(|| {
        let t = Task::parse(text(task, "task")?)?;
        let data = generate(&TaskConfig::standard(t), seed)?;
        write_out(out, Box::into_raw(Box::new(EstlDataset { data })), "out")
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn estl_dataset_free(dataset: *mut EstlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn split_of(s: EstlSplit) -> Split {
    match s {
        EstlSplit::EstlTrain => Split::Train,
        EstlSplit::EstlValid => Split::Valid,
        EstlSplit::EstlTest => Split::Test,
    }
}

/// Sample count of a split and the per-step widths and sequence length
/// shared by every sample. Any out pointer may be null.
///
/// # Safety
/// `dataset` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn estl_dataset_info(
    dataset: *const EstlDataset,
    split: EstlSplit,
    samples: *mut usize,
    length: *mut usize,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> EstlStatus {
    guard(|| {
        let d = &dataset_ref(dataset)?.data;
        let n = d.split(split_of(split)).len();
        let dims = d.dims;
        for (p, v) in [
            (samples, n),
            (length, dims.length),
            (input_dim, dims.input_dim),
            (output_dim, dims.output_dim),
        ] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Copies one sample: `inputs` gets length × input_dim values, `targets`
/// length × output_dim (row-major), `mask` one byte per step (1 = scored).
///
/// # Safety
/// Buffers must be at least the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn estl_dataset_sample(
    dataset: *const EstlDataset,
    split: EstlSplit,
    index: usize,
    inputs: *mut f64,
    inputs_len: usize,
    targets: *mut f64,
    targets_len: usize,
    mask: *mut u8,
    mask_len: usize,
) -> EstlStatus {
    guard(|| {
        let d = &dataset_ref(dataset)?.data;
        let samples = d.split(split_of(split));
        let s = samples.get(index).ok_or_else(|| {
            invalid(format!(
                "index {index} out of range for {} samples",
                samples.len()
            ))
        })?;
        let (x, y) = (s.inputs.data(), s.targets.data());
        if inputs_len != x.len() || targets_len != y.len() || mask_len != s.eval_mask.len() {
            return Err(invalid(format!(
                "buffers must hold {} inputs, {} targets and {} mask bytes",
                x.len(),
                y.len(),
                s.eval_mask.len()
            )));
        }
        if inputs.is_null() || targets.is_null() || mask.is_null() {
            return Err(null("sample buffer"));
        }
        std::slice::from_raw_parts_mut(inputs, inputs_len).copy_from_slice(x);
        std::slice::from_raw_parts_mut(targets, targets_len).copy_from_slice(y);
        for (dst, &m) in std::slice::from_raw_parts_mut(mask, mask_len)
            .iter_mut()
            .zip(&s.eval_mask)
        {
            *dst = u8::from(m);
        }
        Ok(())
    })
}
