#pragma once

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace masca {

/// Base class for all engine errors.
class MascaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public MascaError {
 public:
  using MascaError::MascaError;
};

class DataError : public MascaError {
 public:
  using MascaError::MascaError;
};

class BackendError : public MascaError {
 public:
  using MascaError::MascaError;
};

std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Fixed-point decimal rendering, locale-independent ("4.0000" for (4.0, 4)).
std::string format_fixed(double value, int decimals);

/// "60.00%" style percentage of a decimal fraction.
std::string format_pct(double fraction, int decimals = 2);

/// Minimal fixed-size worker pool. submit() after shutdown() is an error.
class ThreadPool {
 public:
  explicit ThreadPool(std::size_t workers);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  void submit(std::function<void()> job);
  void wait_idle();

 private:
  void worker_loop();

  std::vector<std::thread> workers_;
  std::queue<std::function<void()>> jobs_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::size_t in_flight_ = 0;
  bool stopping_ = false;
};

}  // namespace masca
