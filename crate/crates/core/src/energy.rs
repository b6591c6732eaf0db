//! Span-based energy metering and carbon accounting.
//!
//! A span wraps a labeled stretch of pipeline work. While it is open, a
//! sampler thread integrates `cpu_power_w * utilization * dt` with a
//! rectangle rule; RAM draw is modeled as a constant `ram_gb * ram_w_per_gb`
//! over the span duration. Energy converts to grams of CO2 through the
//! profile's carbon intensity.
//!
//! The utilization source is pluggable. The default probe reads the
//! process's CPU time from /proc and falls back to a constant full load
//! where that is unavailable, so runs are reproducible on any host.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};
use thiserror::Error;

const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("a span labeled {0:?} is already open")]
    DuplicateSpan(String),
    #[error("hardware profile field {field} must be positive, got {value}")]
    InvalidProfile { field: &'static str, value: f64 },
    #[error("negative {what}: {value}")]
    NegativeInput { what: &'static str, value: f64 },
}

/// Power model parameters plus the grid carbon intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// CPU package power at full load, watts.
    pub cpu_power_w: f64,
    pub ram_gb: f64,
    pub ram_w_per_gb: f64,
    /// Grams of CO2 per kWh of electricity.
    pub carbon_intensity_g_per_kwh: f64,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        Self {
            cpu_power_w: 42.5,
            ram_gb: detect_ram_gb().unwrap_or(16.0),
            ram_w_per_gb: 0.375,
            carbon_intensity_g_per_kwh: 475.0,
        }
    }
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<(), EnergyError> {
        for (field, value) in [
            ("cpu_power_w", self.cpu_power_w),
            ("ram_gb", self.ram_gb),
            ("ram_w_per_gb", self.ram_w_per_gb),
            ("carbon_intensity_g_per_kwh", self.carbon_intensity_g_per_kwh),
        ] {
            if !(value > 0.0) {
                return Err(EnergyError::InvalidProfile { field, value });
            }
        }
        Ok(())
    }
}

/// Total memory reported by /proc/meminfo, in GB.
pub fn detect_ram_gb() -> Option<f64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemTotal:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / (1024.0 * 1024.0))
}

/// Converts energy to grams of CO2: `emissions = intensity * energy`.
pub fn compute_emissions(energy_kwh: f64, carbon_intensity_g_per_kwh: f64) -> Result<f64, EnergyError> {
    if energy_kwh < 0.0 {
        return Err(EnergyError::NegativeInput {
            what: "energy_kwh",
            value: energy_kwh,
        });
    }
    if carbon_intensity_g_per_kwh < 0.0 {
        return Err(EnergyError::NegativeInput {
            what: "carbon_intensity_g_per_kwh",
            value: carbon_intensity_g_per_kwh,
        });
    }
    Ok(energy_kwh * carbon_intensity_g_per_kwh)
}

/// Finished measurement for one span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub label: String,
    pub duration_s: f64,
    pub cpu_energy_kwh: f64,
    pub ram_energy_kwh: f64,
    pub total_energy_kwh: f64,
    pub emissions_g: f64,
    pub samples: usize,
}

/// Rectangle-rule accumulator behind both live spans and closed-form tests.
#[derive(Debug, Clone)]
pub struct EnergyIntegrator {
    profile: HardwareProfile,
    cpu_joules: f64,
    duration_s: f64,
    samples: usize,
}

impl EnergyIntegrator {
    pub fn new(profile: HardwareProfile) -> Self {
        Self {
            profile,
            cpu_joules: 0.0,
            duration_s: 0.0,
            samples: 0,
        }
    }

    /// Adds one sampling interval of `dt_s` seconds at the given CPU
    /// utilization fraction.
    pub fn add_sample(&mut self, dt_s: f64, utilization: f64) {
        debug_assert!(dt_s >= 0.0);
        self.cpu_joules += self.profile.cpu_power_w * utilization.clamp(0.0, 1.0) * dt_s;
        self.duration_s += dt_s;
        self.samples += 1;
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    /// Closes the accumulator into a report.
    pub fn finish(&self, label: &str) -> EnergyReport {
        let cpu_energy_kwh = self.cpu_joules / JOULES_PER_KWH;
        let ram_energy_kwh =
            self.profile.ram_gb * self.profile.ram_w_per_gb * self.duration_s / JOULES_PER_KWH;
        let total_energy_kwh = cpu_energy_kwh + ram_energy_kwh;
        EnergyReport {
            label: label.to_string(),
            duration_s: self.duration_s,
            cpu_energy_kwh,
            ram_energy_kwh,
            total_energy_kwh,
            emissions_g: total_energy_kwh * self.profile.carbon_intensity_g_per_kwh,
            samples: self.samples,
        }
    }
}

/// Source of CPU utilization samples in [0, 1].
pub trait UtilizationProbe: Send {
    /// Utilization since the previous call.
    fn sample(&mut self) -> f64;
}

/// Fixed utilization; the reproducible fallback.
pub struct ConstantUtilization(pub f64);

impl UtilizationProbe for ConstantUtilization {
    fn sample(&mut self) -> f64 {
        self.0
    }
}

/// Process CPU utilization from /proc/self/stat (utime + stime deltas over
/// wall time), capped at 1.0.
pub struct ProcessCpuProbe {
    last_cpu_s: f64,
    last_wall: Instant,
    ticks_per_s: f64,
}

impl ProcessCpuProbe {
    pub fn new() -> Option<Self> {
        let ticks = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
        if ticks <= 0 {
            return None;
        }
        let ticks_per_s = ticks as f64;
        let last_cpu_s = Self::process_cpu_seconds(ticks_per_s)?;
        Some(Self {
            last_cpu_s,
            last_wall: Instant::now(),
            ticks_per_s,
        })
    }

    fn process_cpu_seconds(ticks_per_s: f64) -> Option<f64> {
        let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
        // Fields 14 and 15 (utime, stime) counted after the parenthesized
        // command name, which may itself contain spaces.
        let rest = stat.rsplit_once(')')?.1;
        let mut fields = rest.split_whitespace();
        let utime: f64 = fields.nth(11)?.parse().ok()?;
        let stime: f64 = fields.next()?.parse().ok()?;
        Some((utime + stime) / ticks_per_s)
    }
}

impl UtilizationProbe for ProcessCpuProbe {
    fn sample(&mut self) -> f64 {
        let now = Instant::now();
        let wall = now.duration_since(self.last_wall).as_secs_f64();
        self.last_wall = now;
        let cpu = match Self::process_cpu_seconds(self.ticks_per_s) {
            Some(v) => v,
            None => return 1.0,
        };
        let used = cpu - self.last_cpu_s;
        self.last_cpu_s = cpu;
        if wall <= 0.0 {
            return 1.0;
        }
        (used / wall).clamp(0.0, 1.0)
    }
}

type ProbeFactory = Box<dyn Fn() -> Box<dyn UtilizationProbe> + Send + Sync>;

/// Run-scoped meter that opens labeled spans. Labels must be unique among
/// the spans currently open.
pub struct EnergyMeter {
    profile: HardwareProfile,
    interval: Duration,
    open_labels: Arc<Mutex<HashSet<String>>>,
    probe_factory: ProbeFactory,
}

impl EnergyMeter {
    /// Meter with the process-CPU probe, falling back to constant full load
    /// where /proc is unavailable.
    pub fn new(profile: HardwareProfile) -> Result<Self, EnergyError> {
        Self::with_probe_factory(
            profile,
            Box::new(|| match ProcessCpuProbe::new() {
                Some(p) => Box::new(p),
                None => Box::new(ConstantUtilization(1.0)),
            }),
        )
    }

    /// Meter whose spans all see a fixed utilization; used for reproducible
    /// closed-form checks.
    pub fn with_constant_utilization(
        profile: HardwareProfile,
        fraction: f64,
    ) -> Result<Self, EnergyError> {
        Self::with_probe_factory(profile, Box::new(move || Box::new(ConstantUtilization(fraction))))
    }

    pub fn with_probe_factory(
        profile: HardwareProfile,
        probe_factory: ProbeFactory,
    ) -> Result<Self, EnergyError> {
        profile.validate()?;
        Ok(Self {
            profile,
            interval: Duration::from_millis(100),
            open_labels: Arc::new(Mutex::new(HashSet::new())),
            probe_factory,
        })
    }

    pub fn set_sampling_interval(&mut self, interval: Duration) {
        self.interval = interval.max(Duration::from_millis(1));
    }

    pub fn profile(&self) -> &HardwareProfile {
        &self.profile
    }

    /// Opens a span and starts utilization sampling. Errors if a span with
    /// the same label is already open.
    pub fn start_span(&self, label: &str) -> Result<SpanHandle, EnergyError> {
        {
            let mut open = self.open_labels.lock().expect("span registry poisoned");
            if !open.insert(label.to_string()) {
                return Err(EnergyError::DuplicateSpan(label.to_string()));
            }
        }
        let shared = Arc::new(SpanShared {
            integrator: Mutex::new(EnergyIntegrator::new(self.profile)),
            stop: Mutex::new(false),
            wake: Condvar::new(),
        });
        let start = Instant::now();
        let sampler = {
            let shared = Arc::clone(&shared);
            let interval = self.interval;
            let mut probe = (self.probe_factory)();
            std::thread::spawn(move || {
                let mut last = start;
                let mut stopped = shared.stop.lock().expect("span stop flag poisoned");
                loop {
                    let done = *stopped;
                    drop(stopped);

                    let now = Instant::now();
                    let dt = now.duration_since(last).as_secs_f64();
                    last = now;
                    let util = probe.sample();
                    shared
                        .integrator
                        .lock()
                        .expect("span integrator poisoned")
                        .add_sample(dt, util);
                    if done {
                        return;
                    }
                    stopped = shared.stop.lock().expect("span stop flag poisoned");
                    let (guard, _) = shared
                        .wake
                        .wait_timeout(stopped, interval)
                        .expect("span condvar poisoned");
                    stopped = guard;
                }
            })
        };
        Ok(SpanHandle {
            label: label.to_string(),
            shared,
            sampler: Some(sampler),
            open_labels: Arc::clone(&self.open_labels),
        })
    }
}

struct SpanShared {
    integrator: Mutex<EnergyIntegrator>,
    stop: Mutex<bool>,
    wake: Condvar,
}

/// Open span. Consume with [`SpanHandle::stop`] to obtain the report;
/// dropping an un-stopped handle discards the measurement.
pub struct SpanHandle {
    label: String,
    shared: Arc<SpanShared>,
    sampler: Option<JoinHandle<()>>,
    open_labels: Arc<Mutex<HashSet<String>>>,
}

impl SpanHandle {
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Stops sampling, waits for the sampler to fold in the final partial
    /// interval, and returns the report.
    pub fn stop(mut self) -> EnergyReport {
        self.shutdown();
        let report = self
            .shared
            .integrator
            .lock()
            .expect("span integrator poisoned")
            .finish(&self.label);
        report
    }

    fn shutdown(&mut self) {
        if let Some(handle) = self.sampler.take() {
            *self.shared.stop.lock().expect("span stop flag poisoned") = true;
            self.shared.wake.notify_all();
            let _ = handle.join();
        }
        self.open_labels
            .lock()
            .expect("span registry poisoned")
            .remove(&self.label);
    }
}

impl Drop for SpanHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
