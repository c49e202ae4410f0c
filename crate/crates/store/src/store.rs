use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering as AtomicOrdering};
use std::sync::mpsc;
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;

use parking_lot::{Mutex, RwLock};

use crate::error::{IoContext, Result, StoreError};
use crate::flags::{is_persistable, FlagColumn, FlagHistory, FlagMeta};
use crate::segment;
use crate::wal::{Wal, WalPoint};

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// fsync the write-ahead log before `append` returns.
    pub sync: bool,
    pub compaction_wal_bytes: u64,
    pub compaction_points: usize,
    /// Fold logs into segments on a background thread. When false, compaction
    /// runs inline on the appending thread once a trigger is reached.
    pub background_compaction: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            sync: true,
            compaction_wal_bytes: 4 * 1024 * 1024,
            compaction_points: 10_000,
            background_compaction: true,
        }
    }
}

/// A point handed to `append`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewPoint {
    pub phenomenon_time: i64,
    pub result: f64,
    pub result_time: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppendOutcome {
    pub appended: usize,
    /// Indices (into the input batch) of points rejected for a NaN result.
    pub rejected_nan: Vec<usize>,
    /// Points whose timestamp already held the identical value.
    pub unchanged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Order {
    #[default]
    Asc,
    Desc,
}

/// Half-open `[start, end)` range query with pagination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeQuery {
    pub start: i64,
    pub end: i64,
    pub order: Order,
    pub limit: Option<usize>,
    pub offset: usize,
    pub with_flags: bool,
}

impl RangeQuery {
    pub fn new(start: i64, end: i64) -> Self {
        Self {
            start,
            end,
            order: Order::Asc,
            limit: None,
            offset: 0,
            with_flags: false,
        }
    }

    /// Every representable timestamp except `i64::MAX`.
    pub fn all() -> Self {
        Self::new(i64::MIN, i64::MAX)
    }

    pub fn order(mut self, order: Order) -> Self {
        self.order = order;
        self
    }

    pub fn page(mut self, limit: Option<usize>, offset: usize) -> Self {
        self.limit = limit;
        self.offset = offset;
        self
    }

    pub fn with_flags(mut self) -> Self {
        self.with_flags = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredObservation {
    pub id: u64,
    pub phenomenon_time: i64,
    pub result: f64,
    pub result_time: i64,
    /// Current flag; only filled when the query asked for flags.
    pub flag: Option<f32>,
}

#[derive(Debug, Clone, Copy)]
struct Point {
    value: f64,
    result_time: i64,
    id: u64,
}

struct WriterState {
    wal: Wal,
    /// Time range and number of points living only in the log.
    pending: Option<(i64, i64)>,
    pending_points: usize,
    /// Disjoint on-disk segments, t_min -> t_max.
    segments: BTreeMap<i64, i64>,
}

struct Datastream {
    id: u64,
    dir: PathBuf,
    writer: Mutex<WriterState>,
    writer_taken: AtomicBool,
    compaction_queued: AtomicBool,
    data: RwLock<BTreeMap<i64, Point>>,
    flags: RwLock<FlagHistory>,
}

struct Inner {
    root: PathBuf,
    config: StoreConfig,
    datastreams: RwLock<BTreeMap<u64, Arc<Datastream>>>,
    next_observation_id: AtomicU64,
    by_observation_id: RwLock<HashMap<u64, (u64, i64)>>,
    compact_tx: Mutex<Option<mpsc::Sender<u64>>>,
    compactor: Mutex<Option<JoinHandle<()>>>,
}

/// Handle to an opened store. Cheap to clone; all clones share state.
#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

/// Exclusive write access to one datastream.
///
/// At most one writer per datastream exists at a time; dropping it makes the
/// datastream available to [`Store::writer`] again.
pub struct DatastreamWriter {
    store: Store,
    ds: Arc<Datastream>,
}

impl std::fmt::Debug for DatastreamWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DatastreamWriter")
            .field("datastream", &self.ds.id)
            .finish()
    }
}

impl Drop for DatastreamWriter {
    fn drop(&mut self) {
        self.ds.writer_taken.store(false, AtomicOrdering::Release);
    }
}

fn ds_root(root: &Path) -> PathBuf {
    root.join("ds")
}

fn fsync_dir(path: &Path) -> Result<()> {
    fs::File::open(path).and_then(|f| f.sync_all()).at(path)
}

/// Writes `bytes` to `dir/name` through a temporary file and rename.
pub(crate) fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let tmp = dir.join(format!("{name}.tmp"));
    let dst = dir.join(name);
    {
        let mut f = fs::File::create(&tmp).at(&tmp)?;
        f.write_all(bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    fs::rename(&tmp, &dst).at(&dst)?;
    fsync_dir(dir)
}

impl Store {
    /// Opens the store rooted at `root` (the data directory), recovering every
    /// datastream from its segments, flag columns and write-ahead log.
    pub fn open(root: impl AsRef<Path>, config: StoreConfig) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let dsr = ds_root(&root);
        fs::create_dir_all(&dsr).at(&dsr)?;

        let mut datastreams = BTreeMap::new();
        let mut by_id = HashMap::new();
        let mut max_id = 0u64;
        for entry in fs::read_dir(&dsr).at(&dsr)? {
            let entry = entry.at(&dsr)?;
            let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) else {
                continue;
            };
            let ds = Datastream::recover(id, entry.path(), &config)?;
            for (&t, p) in ds.data.read().iter() {
                by_id.insert(p.id, (id, t));
                max_id = max_id.max(p.id);
            }
            datastreams.insert(id, Arc::new(ds));
        }

        let inner = Arc::new(Inner {
            root,
            config,
            datastreams: RwLock::new(datastreams),
            next_observation_id: AtomicU64::new(max_id + 1),
            by_observation_id: RwLock::new(by_id),
            compact_tx: Mutex::new(None),
            compactor: Mutex::new(None),
        });
        if inner.config.background_compaction {
            let (tx, rx) = mpsc::channel::<u64>();
            let weak = Arc::downgrade(&inner);
            let handle = std::thread::Builder::new()
                .name("fairstream-compactor".into())
                .spawn(move || compactor_loop(weak, rx))
                .at(&inner.root)?;
            *inner.compact_tx.lock() = Some(tx);
            *inner.compactor.lock() = Some(handle);
        }
        Ok(Self { inner })
    }

    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    pub fn config(&self) -> &StoreConfig {
        &self.inner.config
    }

    pub fn create_datastream(&self, id: u64) -> Result<()> {
        let mut map = self.inner.datastreams.write();
        if map.contains_key(&id) {
            return Err(StoreError::DatastreamExists(id));
        }
        let dir = ds_root(&self.inner.root).join(id.to_string());
        let ds = Datastream::recover(id, dir, &self.inner.config)?;
        fsync_dir(&ds_root(&self.inner.root))?;
        map.insert(id, Arc::new(ds));
        Ok(())
    }

    pub fn has_datastream(&self, id: u64) -> bool {
        self.inner.datastreams.read().contains_key(&id)
    }

    pub fn datastream_ids(&self) -> Vec<u64> {
        self.inner.datastreams.read().keys().copied().collect()
    }

    fn get(&self, id: u64) -> Result<Arc<Datastream>> {
        self.inner
            .datastreams
            .read()
            .get(&id)
            .cloned()
            .ok_or(StoreError::UnknownDatastream(id))
    }

    /// Hands out the single writer of a datastream.
    pub fn writer(&self, id: u64) -> Result<DatastreamWriter> {
        let ds = self.get(id)?;
        if ds.writer_taken.swap(true, AtomicOrdering::AcqRel) {
            return Err(StoreError::WriterTaken(id));
        }
        Ok(DatastreamWriter {
            store: self.clone(),
            ds,
        })
    }

    pub fn query_range(&self, id: u64, q: RangeQuery) -> Result<Vec<StoredObservation>> {
        if q.start > q.end {
            return Err(StoreError::InvalidRange {
                start: q.start,
                end: q.end,
            });
        }
        let ds = self.get(id)?;
        let data = ds.data.read();
        let flags = q.with_flags.then(|| ds.flags.read());
        let to_obs = |(&t, p): (&i64, &Point)| StoredObservation {
            id: p.id,
            phenomenon_time: t,
            result: p.value,
            result_time: p.result_time,
            flag: flags.as_ref().map(|f| f.current(t)),
        };
        let range = data.range(q.start..q.end);
        let limit = q.limit.unwrap_or(usize::MAX);
        Ok(match q.order {
            Order::Asc => range.skip(q.offset).take(limit).map(to_obs).collect(),
            Order::Desc => range.rev().skip(q.offset).take(limit).map(to_obs).collect(),
        })
    }

    pub fn point_count(&self, id: u64) -> Result<usize> {
        Ok(self.get(id)?.data.read().len())
    }

    /// First and last stored timestamp.
    pub fn time_bounds(&self, id: u64) -> Result<Option<(i64, i64)>> {
        let ds = self.get(id)?;
        let data = ds.data.read();
        let bounds = data
            .first_key_value()
            .map(|(&a, _)| (a, *data.last_key_value().unwrap().0));
        Ok(bounds)
    }

    /// The flag from the newest column containing `timestamp`, or UNFLAGGED.
    pub fn current_flag(&self, id: u64, timestamp: i64) -> Result<f32> {
        let ds = self.get(id)?;
        if !ds.data.read().contains_key(&timestamp) {
            return Err(StoreError::UnknownTimestamp {
                datastream: id,
                timestamps: vec![timestamp],
            });
        }
        let flag = ds.flags.read().current(timestamp);
        Ok(flag)
    }

    pub fn flag_columns(&self, id: u64) -> Result<Vec<Arc<FlagColumn>>> {
        Ok(self.get(id)?.flags.read().columns.clone())
    }

    pub fn flag_column_path(&self, id: u64, column_id: u64) -> PathBuf {
        ds_root(&self.inner.root)
            .join(id.to_string())
            .join("flags")
            .join(format!("{column_id}.ffc"))
    }

    /// Resolves an observation id to its datastream and stored point.
    pub fn observation(&self, observation_id: u64) -> Option<(u64, StoredObservation)> {
        let (ds_id, t) = *self.inner.by_observation_id.read().get(&observation_id)?;
        let ds = self.get(ds_id).ok()?;
        let data = ds.data.read();
        let p = data.get(&t)?;
        let obs = StoredObservation {
            id: p.id,
            phenomenon_time: t,
            result: p.value,
            result_time: p.result_time,
            flag: Some(ds.flags.read().current(t)),
        };
        Some((ds_id, obs))
    }

    /// Folds every datastream's log into segments.
    pub fn compact_all(&self) -> Result<()> {
        for id in self.datastream_ids() {
            self.inner.compact(id)?;
        }
        Ok(())
    }

    /// Clean shutdown: folds logs into segments and stops the compactor.
    pub fn close(self) -> Result<()> {
        let result = self.compact_all();
        self.inner.compact_tx.lock().take();
        if let Some(handle) = self.inner.compactor.lock().take() {
            let _ = handle.join();
        }
        result
    }
}

fn compactor_loop(store: Weak<Inner>, rx: mpsc::Receiver<u64>) {
    while let Ok(id) = rx.recv() {
        let Some(inner) = store.upgrade() else {
            break;
        };
        if let Err(e) = inner.compact(id) {
            tracing::error!(datastream = id, error = %e, "compaction failed");
        }
    }
}

impl Inner {
    fn compact(&self, id: u64) -> Result<()> {
        let Some(ds) = self.datastreams.read().get(&id).cloned() else {
            return Ok(());
        };
        ds.compaction_queued.store(false, AtomicOrdering::Release);
        let mut w = ds.writer.lock();
        let seeds: Vec<_> = w.pending.into_iter().collect();
        if seeds.is_empty() {
            return Ok(());
        }
        ds.compact_locked(&mut w, seeds)
    }
}

impl Datastream {
    fn recover(id: u64, dir: PathBuf, config: &StoreConfig) -> Result<Self> {
        let seg_dir = dir.join("seg");
        let flag_dir = dir.join("flags");
        fs::create_dir_all(&seg_dir).at(&seg_dir)?;
        fs::create_dir_all(&flag_dir).at(&flag_dir)?;

        let mut data = BTreeMap::new();
        let mut segments = BTreeMap::new();
        let mut overlaps = Vec::new();

        let mut seg_files = Vec::new();
        for entry in fs::read_dir(&seg_dir).at(&seg_dir)? {
            let path = entry.at(&seg_dir)?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.ends_with(".tmp") {
                fs::remove_file(&path).at(&path)?;
            } else if let Some(range) = segment::parse_file_name(name) {
                seg_files.push((range, path));
            }
        }
        seg_files.sort_by_key(|(r, _)| *r);
        for ((t_min, t_max), path) in &seg_files {
            let bytes = fs::read(path).at(path)?;
            let seg = segment::decode(path, &bytes)?;
            if seg.header.datastream_id != id
                || seg.header.t_min != *t_min
                || seg.header.t_max != *t_max
            {
                return Err(StoreError::Corrupt {
                    path: path.clone(),
                    reason: "header does not match file name or datastream".into(),
                });
            }
            let sc_path = seg_dir.join(segment::sidecar_name(*t_min, *t_max));
            let sc_bytes = fs::read(&sc_path).at(&sc_path)?;
            let sc = segment::decode_sidecar(&sc_path, &sc_bytes, seg.timestamps.len())?;
            if let Some((&prev_min, &prev_max)) = segments.range(..=*t_min).next_back() {
                if prev_max >= *t_min {
                    overlaps.push((prev_min, prev_max));
                    overlaps.push((*t_min, *t_max));
                }
            }
            for i in 0..seg.timestamps.len() {
                data.insert(
                    seg.timestamps[i],
                    Point {
                        value: seg.values[i],
                        result_time: sc.result_times[i],
                        id: sc.ids[i],
                    },
                );
            }
            segments.insert(*t_min, *t_max);
        }
        // Sidecars whose segment never made it to disk.
        for entry in fs::read_dir(&seg_dir).at(&seg_dir)? {
            let path = entry.at(&seg_dir)?.path();
            if let Some(stem) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".fsr"))
            {
                if !seg_dir.join(format!("{stem}.fsg")).exists() {
                    fs::remove_file(&path).at(&path)?;
                }
            }
        }

        let mut history = FlagHistory::default();
        let mut flag_files = Vec::new();
        for entry in fs::read_dir(&flag_dir).at(&flag_dir)? {
            let path = entry.at(&flag_dir)?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.ends_with(".tmp") {
                fs::remove_file(&path).at(&path)?;
            } else if let Some(cid) = name
                .strip_suffix(".ffc")
                .and_then(|s| s.parse::<u64>().ok())
            {
                flag_files.push((cid, path));
            }
        }
        flag_files.sort();
        for (cid, path) in flag_files {
            let bytes = fs::read(&path).at(&path)?;
            let col = FlagColumn::decode(&path, &bytes)?;
            if col.column_id != cid || col.datastream_id != id {
                return Err(StoreError::Corrupt {
                    path,
                    reason: "column header does not match file name or datastream".into(),
                });
            }
            history.push(Arc::new(col));
        }

        let wal_path = dir.join("wal.log");
        let (wal, replay) = Wal::open(&wal_path, config.sync)?;
        let mut pending: Option<(i64, i64)> = None;
        for p in &replay.points {
            data.insert(
                p.phenomenon_time,
                Point {
                    value: p.value,
                    result_time: p.result_time,
                    id: p.id,
                },
            );
            pending = Some(match pending {
                None => (p.phenomenon_time, p.phenomenon_time),
                Some((a, b)) => (a.min(p.phenomenon_time), b.max(p.phenomenon_time)),
            });
        }

        let ds = Self {
            id,
            dir,
            writer: Mutex::new(WriterState {
                wal,
                pending,
                pending_points: replay.points.len(),
                segments,
            }),
            writer_taken: AtomicBool::new(false),
            compaction_queued: AtomicBool::new(false),
            data: RwLock::new(data),
            flags: RwLock::new(history),
        };
        if !overlaps.is_empty() {
            // Left behind by a compaction interrupted between writing the
            // merged segment and removing its inputs.
            let mut w = ds.writer.lock();
            let mut seeds = overlaps;
            seeds.extend(w.pending);
            ds.compact_locked(&mut w, seeds)?;
        }
        Ok(ds)
    }

    /// Writes every in-memory point in the closure of `seeds` over overlapping
    /// segments into one new segment, removes the inputs and resets the log.
    fn compact_locked(&self, w: &mut WriterState, seeds: Vec<(i64, i64)>) -> Result<()> {
        let mut lo = seeds.iter().map(|s| s.0).min().expect("non-empty seeds");
        let mut hi = seeds.iter().map(|s| s.1).max().unwrap();
        let mut inputs: Vec<(i64, i64)>;
        loop {
            inputs = w
                .segments
                .iter()
                .filter(|(&a, &b)| a <= hi && b >= lo)
                .map(|(&a, &b)| (a, b))
                .collect();
            let new_lo = inputs.iter().map(|s| s.0).min().unwrap_or(lo).min(lo);
            let new_hi = inputs.iter().map(|s| s.1).max().unwrap_or(hi).max(hi);
            if (new_lo, new_hi) == (lo, hi) {
                break;
            }
            (lo, hi) = (new_lo, new_hi);
        }

        let (timestamps, values, result_times, ids) = {
            let data = self.data.read();
            let mut ts = Vec::new();
            let mut vs = Vec::new();
            let mut rts = Vec::new();
            let mut ids = Vec::new();
            for (&t, p) in data.range(lo..=hi) {
                ts.push(t);
                vs.push(p.value);
                rts.push(p.result_time);
                ids.push(p.id);
            }
            (ts, vs, rts, ids)
        };
        let seg_dir = self.dir.join("seg");
        let mut new_range = None;
        if let (Some(&t_min), Some(&t_max)) = (timestamps.first(), timestamps.last()) {
            write_atomic(
                &seg_dir,
                &segment::sidecar_name(t_min, t_max),
                &segment::encode_sidecar(&result_times, &ids),
            )?;
            write_atomic(
                &seg_dir,
                &segment::file_name(t_min, t_max),
                &segment::encode(self.id, &timestamps, &values),
            )?;
            new_range = Some((t_min, t_max));
        }
        for (a, b) in &inputs {
            w.segments.remove(a);
            if Some((*a, *b)) == new_range {
                continue;
            }
            let p = seg_dir.join(segment::file_name(*a, *b));
            fs::remove_file(&p).at(&p)?;
            let p = seg_dir.join(segment::sidecar_name(*a, *b));
            if p.exists() {
                fs::remove_file(&p).at(&p)?;
            }
        }
        fsync_dir(&seg_dir)?;
        if let Some((a, b)) = new_range {
            w.segments.insert(a, b);
        }
        w.wal.reset()?;
        w.pending = None;
        w.pending_points = 0;
        tracing::debug!(datastream = self.id, points = timestamps.len(), "compacted");
        Ok(())
    }
}

impl DatastreamWriter {
    pub fn datastream_id(&self) -> u64 {
        self.ds.id
    }

    /// Appends measured points. NaN results are rejected per point; the rest
    /// are durable in the log when this returns. An existing point with the
    /// same timestamp is replaced unless it holds the same value, in which
    /// case it is left as it was.
    pub fn append(&self, points: &[NewPoint]) -> Result<AppendOutcome> {
        self.write_points(points, false)
    }

    /// Like [`append`](Self::append) but admits NaN results, which only QC
    /// processing produces.
    pub fn append_processed(&self, points: &[NewPoint]) -> Result<AppendOutcome> {
        self.write_points(points, true)
    }

    fn write_points(&self, points: &[NewPoint], allow_nan: bool) -> Result<AppendOutcome> {
        if points.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        let inner = &self.store.inner;
        let mut w = self.ds.writer.lock();

        let mut outcome = AppendOutcome::default();
        let mut logged = Vec::with_capacity(points.len());
        let mut new_ids = Vec::new();
        {
            let data = self.ds.data.read();
            let mut batch_ids: HashMap<i64, u64> = HashMap::new();
            let mut batch_values: HashMap<i64, u64> = HashMap::new();
            for (i, p) in points.iter().enumerate() {
                if p.result.is_nan() && !allow_nan {
                    outcome.rejected_nan.push(i);
                    continue;
                }
                let t = p.phenomenon_time;
                // Re-delivery of the stored value is a no-op, so the first
                // result time survives repeated ingestion.
                let current = batch_values.get(&t).copied().or_else(|| data.get(&t).map(|e| e.value.to_bits()));
                if current == Some(p.result.to_bits()) {
                    outcome.unchanged += 1;
                    continue;
                }
                batch_values.insert(t, p.result.to_bits());
                let id = match data.get(&t) {
                    Some(existing) => existing.id,
                    None => *batch_ids.entry(t).or_insert_with(|| {
                        let id = inner.next_observation_id.fetch_add(1, AtomicOrdering::Relaxed);
                        new_ids.push((id, t));
                        id
                    }),
                };
                logged.push(WalPoint {
                    phenomenon_time: t,
                    value: p.result,
                    result_time: p.result_time,
                    id,
                });
            }
        }
        if logged.is_empty() {
            return Ok(outcome);
        }
        w.wal.append(&logged)?;

        {
            let mut data = self.ds.data.write();
            for p in &logged {
                data.insert(
                    p.phenomenon_time,
                    Point {
                        value: p.value,
                        result_time: p.result_time,
                        id: p.id,
                    },
                );
            }
        }
        if !new_ids.is_empty() {
            let mut idx = inner.by_observation_id.write();
            for (id, t) in new_ids {
                idx.insert(id, (self.ds.id, t));
            }
        }
        let lo = logged.iter().map(|p| p.phenomenon_time).min().unwrap();
        let hi = logged.iter().map(|p| p.phenomenon_time).max().unwrap();
        w.pending = Some(match w.pending {
            None => (lo, hi),
            Some((a, b)) => (a.min(lo), b.max(hi)),
        });
        w.pending_points += logged.len();
        outcome.appended = logged.len();

        let due = w.pending_points >= inner.config.compaction_points
            || w.wal.len_bytes() >= inner.config.compaction_wal_bytes;
        if due {
            let tx = inner.compact_tx.lock().clone();
            match tx {
                Some(tx) => {
                    if !self.ds.compaction_queued.swap(true, AtomicOrdering::AcqRel) {
                        let _ = tx.send(self.ds.id);
                    }
                }
                None => {
                    let seeds: Vec<_> = w.pending.into_iter().collect();
                    self.ds.compact_locked(&mut w, seeds)?;
                }
            }
        }
        Ok(outcome)
    }

    /// Appends a new flag column and returns its id. Every entry timestamp
    /// must exist; otherwise nothing is written.
    pub fn write_flag_column(&self, meta: FlagMeta, entries: &[(i64, f32)]) -> Result<u64> {
        let _w = self.ds.writer.lock();
        let mut sorted: BTreeMap<i64, f32> = BTreeMap::new();
        for &(t, f) in entries {
            if !is_persistable(f) {
                return Err(StoreError::InvalidFlag(f));
            }
            sorted.insert(t, f);
        }
        {
            let data = self.ds.data.read();
            let unknown: Vec<i64> = sorted
                .keys()
                .filter(|t| !data.contains_key(t))
                .copied()
                .collect();
            if !unknown.is_empty() {
                return Err(StoreError::UnknownTimestamp {
                    datastream: self.ds.id,
                    timestamps: unknown,
                });
            }
        }
        let column_id = self.ds.flags.read().next_column_id();
        let column = FlagColumn {
            datastream_id: self.ds.id,
            column_id,
            meta,
            entries: sorted.into_iter().collect(),
        };
        let flag_dir = self.ds.dir.join("flags");
        write_atomic(&flag_dir, &format!("{column_id}.ffc"), &column.encode())?;
        self.ds.flags.write().push(Arc::new(column));
        Ok(column_id)
    }

    /// Forces the log into segments now.
    pub fn compact(&self) -> Result<()> {
        self.store.inner.compact(self.ds.id)
    }
}
