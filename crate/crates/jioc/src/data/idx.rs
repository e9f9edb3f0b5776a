//! Loader for IDX-format image/label files (the MNIST container format).
//!
//! Images and labels are parsed strictly: wrong magic numbers, truncated
//! payloads and trailing bytes are reported with the byte offset at which
//! the problem was detected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::{assemble_stream, LabeledExample, TaskStream};
use crate::error::{Error, Result};

/// Big-endian magic number of an IDX3 image file (unsigned bytes, 3 dims).
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
/// Big-endian magic number of an IDX1 label file (unsigned bytes, 1 dim).
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        IdxReader {
            bytes,
            pos: 0,
            path,
        }
    }

    fn error(&self, message: impl ToString) -> Error {
        Error::format(self.path.display(), self.pos as u64, message)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(self.error("file truncated while reading a 32-bit field"));
        }
        let value = u32::from_be_bytes(self.bytes[self.pos..end].try_into().expect("4 bytes"));
        self.pos = end;
        Ok(value)
    }

    fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.error(format!(
                "file truncated: expected {n} more bytes, found {}",
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(format!(
                "{} trailing bytes after the expected payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn read_magic(reader: &mut IdxReader<'_>, expected: u32, kind: &str) -> Result<()> {
    let start = reader.pos;
    let magic = reader.read_u32()?;
    if magic != expected {
        return Err(Error::format(
            reader.path.display(),
            start as u64,
            format!("bad {kind} magic: expected {expected:#010x}, got {magic:#010x}"),
        ));
    }
    Ok(())
}

/// Maps raw dataset class labels to dense global class ids and tasks.
///
/// Tasks must be numbered densely from 0 and hold the same number of
/// classes each; within a task, classes are ordered by their raw label, so
/// task `t` covers global ids `[t*m, (t+1)*m)`.
#[derive(Debug, Clone)]
pub struct ClassTaskMap {
    global_ids: BTreeMap<usize, (usize, usize)>,
}

impl ClassTaskMap {
    pub fn new(class_to_task: &BTreeMap<usize, usize>) -> Result<Self> {
        if class_to_task.is_empty() {
            return Err(Error::Config("class-to-task map is empty".into()));
        }
        let num_tasks = class_to_task.values().max().unwrap() + 1;
        let mut per_task: Vec<Vec<usize>> = vec![Vec::new(); num_tasks];
        for (&class, &task) in class_to_task {
            per_task[task].push(class);
        }
        let m = per_task[0].len();
        for (task, classes) in per_task.iter().enumerate() {
            if classes.is_empty() {
                return Err(Error::Config(format!(
                    "class-to-task map skips task {task}"
                )));
            }
            if classes.len() != m {
                return Err(Error::Config(format!(
                    "task {task} maps {} classes, expected {m} as in task 0",
                    classes.len()
                )));
            }
        }
        let mut global_ids = BTreeMap::new();
        for (task, classes) in per_task.iter().enumerate() {
            // BTreeMap iteration already yields ascending raw labels.
            for (rank, &class) in classes.iter().enumerate() {
                global_ids.insert(class, (task, task * m + rank));
            }
        }
        Ok(ClassTaskMap { global_ids })
    }

    fn resolve(&self, raw_class: usize) -> Option<(usize, usize)> {
        self.global_ids.get(&raw_class).copied()
    }
}

/// Parses IDX image and label files into labeled examples.
///
/// Pixel bytes are scaled to `[0, 1]`; each example is routed to the task of
/// its mapped class. Labels absent from the map are format errors naming the
/// class.
pub fn load_idx_examples(
    images_path: &Path,
    labels_path: &Path,
    map: &ClassTaskMap,
) -> Result<Vec<LabeledExample>> {
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path.display(), e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path.display(), e))?;

    let mut images = IdxReader::new(&image_bytes, images_path);
    read_magic(&mut images, IMAGE_MAGIC, "image")?;
    let count = images.read_u32()? as usize;
    let rows = images.read_u32()? as usize;
    let cols = images.read_u32()? as usize;
    let pixels_per_image = rows * cols;

    let mut labels = IdxReader::new(&label_bytes, labels_path);
    read_magic(&mut labels, LABEL_MAGIC, "label")?;
    let label_count = labels.read_u32()? as usize;
    if label_count != count {
        return Err(Error::format(
            labels_path.display(),
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }

    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let label_offset = labels.pos as u64;
        let pixels = images.read_bytes(pixels_per_image)?;
        let raw_class = labels.read_bytes(1)?[0] as usize;
        let (task_id, class_id) = map.resolve(raw_class).ok_or_else(|| {
            Error::format(
                labels_path.display(),
                label_offset,
                format!("class {raw_class} has no task mapping"),
            )
        })?;
        examples.push(LabeledExample {
            features: pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
            class_id,
            task_id,
        });
    }
    images.expect_end()?;
    labels.expect_end()?;
    Ok(examples)
}

/// Loads an IDX dataset as a task stream with no held-out split; attach one
/// from a second dataset via [`TaskStream::attach_eval_from`].
pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    class_to_task: &BTreeMap<usize, usize>,
) -> Result<TaskStream> {
    let map = ClassTaskMap::new(class_to_task)?;
    let examples = load_idx_examples(images_path, labels_path, &map)?;
    assemble_stream(examples, Vec::new(), &images_path.display().to_string())
}
