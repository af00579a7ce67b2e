use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Frame, MediaBackend, MediaError, SamplePlan};
use crate::model::MediaInfo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfmpegConfig {
    pub ffmpeg: PathBuf,
    pub ffprobe: PathBuf,
    /// Cap on concurrently running external processes.
    pub max_processes: usize,
    /// Encoder arguments for re-timed output, placed after the filter graph.
    pub reencode_args: Vec<String>,
}

impl Default for FfmpegConfig {
    fn default() -> Self {
        FfmpegConfig {
            ffmpeg: "ffmpeg".into(),
            ffprobe: "ffprobe".into(),
            max_processes: 4,
            reencode_args: ["-c:v", "libx264", "-preset", "veryfast", "-crf", "18", "-pix_fmt", "yuv420p"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// Counting semaphore bounding external processes.
struct ProcessSlots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a ProcessSlots);

impl ProcessSlots {
    fn new(n: usize) -> Self {
        ProcessSlots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Media backend driving an ffmpeg-compatible `ffprobe`/`ffmpeg` pair.
pub struct FfmpegBackend {
    config: FfmpegConfig,
    slots: ProcessSlots,
}

fn stderr_tail(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    lines[lines.len().saturating_sub(4)..].join(" | ")
}

fn parse_rate(v: Option<&Value>) -> Option<f64> {
    let s = v?.as_str()?;
    let (num, den) = s.split_once('/').unwrap_or((s, "1"));
    let (num, den): (f64, f64) = (num.trim().parse().ok()?, den.trim().parse().ok()?);
    (num > 0.0 && den > 0.0).then(|| num / den)
}

fn parse_num<T: std::str::FromStr>(v: Option<&Value>) -> Option<T> {
    match v? {
        Value::String(s) => s.trim().parse().ok(),
        other => other.to_string().parse().ok(),
    }
}

impl FfmpegBackend {
    pub fn new(config: FfmpegConfig) -> Self {
        let slots = ProcessSlots::new(config.max_processes);
        FfmpegBackend { config, slots }
    }

    pub fn config(&self) -> &FfmpegConfig {
        &self.config
    }

    /// True when both tools can be launched.
    pub fn available(&self) -> bool {
        [&self.config.ffmpeg, &self.config.ffprobe].iter().all(|bin| {
            Command::new(bin)
                .arg("-version")
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .map(|s| s.success())
                .unwrap_or(false)
        })
    }

    fn run(&self, program: &Path, args: &[String]) -> Result<Output, MediaError> {
        let _slot = self.slots.acquire();
        Command::new(program)
            .args(args)
            .stdin(Stdio::null())
            .output()
            .map_err(|source| MediaError::Spawn {
                program: program.display().to_string(),
                source,
            })
    }

    fn ffprobe_json(&self, path: &Path, count_frames: bool) -> Result<Value, MediaError> {
        let mut args: Vec<String> = vec!["-v".into(), "error".into(), "-select_streams".into(), "v:0".into()];
        if count_frames {
            args.push("-count_frames".into());
        }
        args.extend(
            [
                "-show_entries",
                "stream=width,height,nb_frames,nb_read_frames,avg_frame_rate,r_frame_rate,duration:format=duration",
                "-of",
                "json",
            ]
            .map(String::from),
        );
        args.push(path.display().to_string());
        let out = self.run(&self.config.ffprobe, &args)?;
        if !out.status.success() {
            return Err(MediaError::Undecodable {
                path: path.to_path_buf(),
                message: stderr_tail(&out),
            });
        }
        serde_json::from_slice(&out.stdout).map_err(|e| MediaError::Undecodable {
            path: path.to_path_buf(),
            message: format!("unreadable probe output: {e}"),
        })
    }

    /// Encodes raw RGB frames into a clip at `path`. `codec_args` select the
    /// encoder, e.g. `["-c:v","ffv1","-pix_fmt","bgr0"]` for a lossless file.
    pub fn encode_frames(&self, frames: &[Frame], fps: f64, path: &Path, codec_args: &[&str]) -> Result<(), MediaError> {
        let first = frames
            .first()
            .ok_or_else(|| MediaError::InvalidArgument("no frames to encode".into()))?;
        let (w, h) = (first.width, first.height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(MediaError::InvalidArgument("frames differ in size".into()));
        }
        let mut args: Vec<String> = ["-v", "error", "-y", "-f", "rawvideo", "-pix_fmt", "rgb24"]
            .map(String::from)
            .to_vec();
        args.extend(["-s".into(), format!("{w}x{h}"), "-r".into(), fps.to_string(), "-i".into(), "-".into()]);
        args.extend(codec_args.iter().map(|s| s.to_string()));
        args.push(path.display().to_string());

        let _slot = self.slots.acquire();
        let mut child = Command::new(&self.config.ffmpeg)
            .args(&args)
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| MediaError::Spawn {
                program: self.config.ffmpeg.display().to_string(),
                source,
            })?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let out = std::thread::scope(|s| {
            let writer = s.spawn(move || {
                for f in frames {
                    stdin.write_all(&f.pixels)?;
                }
                Ok::<_, std::io::Error>(())
            });
            let out = child.wait_with_output();
            let _ = writer.join();
            out
        })
        .map_err(|e| MediaError::EncoderFailed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if !out.status.success() {
            return Err(MediaError::EncoderFailed {
                path: path.to_path_buf(),
                message: stderr_tail(&out),
            });
        }
        Ok(())
    }
}

impl MediaBackend for FfmpegBackend {
    fn probe(&self, path: &Path) -> Result<MediaInfo, MediaError> {
        if !path.is_file() {
            return Err(MediaError::MissingFile(path.to_path_buf()));
        }
        let mut doc = self.ffprobe_json(path, false)?;
        let undecodable = |message: &str| MediaError::Undecodable {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let stream = |doc: &Value| doc["streams"].as_array().and_then(|s| s.first()).cloned();
        let mut s = stream(&doc).ok_or_else(|| undecodable("no video stream"))?;
        let width: u32 = parse_num(s.get("width")).ok_or_else(|| undecodable("missing width"))?;
        let height: u32 = parse_num(s.get("height")).ok_or_else(|| undecodable("missing height"))?;
        let fps = parse_rate(s.get("avg_frame_rate"))
            .or_else(|| parse_rate(s.get("r_frame_rate")))
            .ok_or_else(|| undecodable("missing frame rate"))?;
        let mut frames: u64 = parse_num(s.get("nb_frames")).unwrap_or(0);
        if frames == 0 {
            // containers like Matroska do not store a frame count
            doc = self.ffprobe_json(path, true)?;
            s = stream(&doc).ok_or_else(|| undecodable("no video stream"))?;
            frames = parse_num(s.get("nb_read_frames")).unwrap_or(0);
        }
        if frames == 0 {
            return Err(MediaError::ZeroFrames(path.to_path_buf()));
        }
        let duration = parse_num::<f64>(s.get("duration"))
            .filter(|d| *d > 0.0)
            .or_else(|| parse_num::<f64>(doc["format"].get("duration")).filter(|d| *d > 0.0))
            .unwrap_or(frames as f64 / fps);
        MediaInfo::new(width, height, frames, fps, duration).map_err(|m| undecodable(&m))
    }

    fn sample_frames(&self, path: &Path, plan: &SamplePlan) -> Result<Vec<Frame>, MediaError> {
        plan.validate()?;
        let info = self.probe(path)?;
        let indices = plan.indices(&info);
        let select = indices
            .iter()
            .map(|i| format!("eq(n\\,{i})"))
            .collect::<Vec<_>>()
            .join("+");
        let mut args: Vec<String> = vec!["-v".into(), "error".into(), "-i".into(), path.display().to_string()];
        args.extend([
            "-map".into(),
            "0:v:0".into(),
            "-vf".into(),
            format!("select='{select}'"),
            "-fps_mode".into(),
            "passthrough".into(),
            "-f".into(),
            "rawvideo".into(),
            "-pix_fmt".into(),
            "rgb24".into(),
            "-".into(),
        ]);
        let out = self.run(&self.config.ffmpeg, &args)?;
        let frame_len = info.width as usize * info.height as usize * 3;
        let got = out.stdout.len() / frame_len;
        if !out.status.success() || got < indices.len() {
            return Err(MediaError::DecodeFailed {
                path: path.to_path_buf(),
                last_good_index: got.checked_sub(1).map(|g| indices[g]),
                message: format!("decoded {got} of {} frames: {}", indices.len(), stderr_tail(&out)),
            });
        }
        indices
            .iter()
            .zip(out.stdout.chunks_exact(frame_len))
            .map(|(&i, px)| Frame::new(info.width, info.height, px.to_vec(), i as f64 / info.fps))
            .collect()
    }

    fn reencode_speedup(&self, input: &Path, output: &Path, speed_factor: f64) -> Result<MediaInfo, MediaError> {
        if !(speed_factor.is_finite() && speed_factor >= 1.0) {
            return Err(MediaError::InvalidArgument(format!("speed factor {speed_factor} is below 1")));
        }
        let info = self.probe(input)?;
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            if !parent.is_dir() {
                return Err(MediaError::Unwritable {
                    path: output.to_path_buf(),
                    message: "parent directory does not exist".into(),
                });
            }
        }
        let mut args: Vec<String> = vec!["-v".into(), "error".into(), "-y".into(), "-i".into(), input.display().to_string()];
        args.extend([
            "-map".into(),
            "0:v:0".into(),
            "-vf".into(),
            format!("setpts=PTS/{speed_factor}"),
            "-r".into(),
            (info.fps * speed_factor).to_string(),
            "-an".into(),
        ]);
        args.extend(self.config.reencode_args.iter().cloned());
        args.push(output.display().to_string());
        let out = self.run(&self.config.ffmpeg, &args)?;
        if !out.status.success() {
            let message = stderr_tail(&out);
            let unwritable = message.contains("Permission denied") || message.contains("No such file or directory");
            return Err(if unwritable {
                MediaError::Unwritable {
                    path: output.to_path_buf(),
                    message,
                }
            } else {
                MediaError::EncoderFailed {
                    path: output.to_path_buf(),
                    message,
                }
            });
        }
        self.probe(output)
    }
}
