#pragma once

/**
 * subprocess.hpp - child processes with pipes, deadlines and cleanup.
 *
 * Two consumers: the LSP client (long-lived child, framed stdin/stdout
 * traffic with per-request timeouts) and the compilation-check metric
 * (run a build command, bounded by a wall-clock timeout, only the exit
 * status matters). POSIX only.
 */

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "mgd/common.hpp"

namespace mgd::subprocess {

using Clock = std::chrono::steady_clock;
using Deadline = Clock::time_point;

inline Deadline deadline_in_ms(long ms) { return Clock::now() + std::chrono::milliseconds(ms); }

// ============================================================================
// Child
// ============================================================================

/** A spawned `/bin/sh -c command` with piped stdin/stdout. Move-only; the
 *  destructor kills and reaps whatever is still running. */
class Child {
 public:
  static Child spawn(const std::string& command,
                     const std::optional<std::filesystem::path>& cwd = std::nullopt,
                     bool capture_output = true) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw Error(std::string("pipe: ") + std::strerror(errno));

    pid_t pid = ::fork();
    if (pid < 0) throw Error(std::string("fork: ") + std::strerror(errno));

    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      if (capture_output) {
        ::dup2(from_child[1], STDOUT_FILENO);
      } else {
        int devnull = ::open("/dev/null", O_RDWR);
        ::dup2(devnull, STDOUT_FILENO);
        ::dup2(devnull, STDERR_FILENO);
      }
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      if (cwd && ::chdir(cwd->c_str()) != 0) ::_exit(127);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }

    ::close(to_child[0]);
    ::close(from_child[1]);
    Child c;
    c.pid_ = pid;
    c.stdin_fd_ = to_child[1];
    c.stdout_fd_ = from_child[0];
    return c;
  }

  Child(Child&& other) noexcept { *this = std::move(other); }
  Child& operator=(Child&& other) noexcept {
    if (this != &other) {
      cleanup();
      pid_ = other.pid_;
      stdin_fd_ = other.stdin_fd_;
      stdout_fd_ = other.stdout_fd_;
      reaped_ = other.reaped_;
      other.pid_ = -1;
      other.stdin_fd_ = other.stdout_fd_ = -1;
      other.reaped_ = true;
    }
    return *this;
  }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;
  ~Child() { cleanup(); }

  pid_t pid() const { return pid_; }
  int stdout_fd() const { return stdout_fd_; }

  void write_all(std::string_view data) {
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::write(stdin_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(std::string("write to child: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  void close_stdin() {
    if (stdin_fd_ >= 0) {
      ::close(stdin_fd_);
      stdin_fd_ = -1;
    }
  }

  bool running() {
    if (reaped_ || pid_ < 0) return false;
    int status = 0;
    pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
      record_exit(status);
      return false;
    }
    return r == 0;
  }

  /** Blocking wait; returns the exit code, or 128+signal if killed. */
  int wait() {
    if (!reaped_ && pid_ >= 0) {
      int status = 0;
      while (::waitpid(pid_, &status, 0) < 0) {
        if (errno != EINTR) throw Error(std::string("waitpid: ") + std::strerror(errno));
      }
      record_exit(status);
    }
    return exit_code_;
  }

  /** Wait until the deadline; true (with the exit code stored) if it exited. */
  bool wait_until(Deadline deadline) {
    while (!reaped_) {
      if (!running() && reaped_) break;
      if (Clock::now() >= deadline) return false;
      ::usleep(5000);
    }
    return true;
  }

  void kill_now() {
    if (!reaped_ && pid_ >= 0) {
      ::kill(pid_, SIGKILL);
      wait();
    }
  }

  int exit_code() const { return exit_code_; }

 private:
  Child() = default;

  void record_exit(int status) {
    reaped_ = true;
    exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status)
                                   : (WIFSIGNALED(status) ? 128 + WTERMSIG(status) : -1);
  }

  void cleanup() {
    close_stdin();
    if (stdout_fd_ >= 0) {
      ::close(stdout_fd_);
      stdout_fd_ = -1;
    }
    if (pid_ >= 0 && !reaped_) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
      reaped_ = true;
    }
  }

  pid_t pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  bool reaped_ = false;
  int exit_code_ = -1;
};

// ============================================================================
// Buffered reads with deadlines
// ============================================================================

/** Accumulates child stdout; every read observes a deadline so a hung server
 *  surfaces as an error rather than a stuck evaluation. */
class FdReader {
 public:
  explicit FdReader(int fd) : fd_(fd) {}

  /** Exactly n bytes, or throws naming the reason (timeout / eof). */
  std::string read_exact(std::size_t n, Deadline deadline, std::string_view what) {
    while (buffer_.size() < n) fill(deadline, what);
    std::string out = buffer_.substr(0, n);
    buffer_.erase(0, n);
    return out;
  }

  /** One line, terminator stripped ('\r\n' or '\n'). */
  std::string read_line(Deadline deadline, std::string_view what) {
    std::size_t searched = 0;
    for (;;) {
      std::size_t nl = buffer_.find('\n', searched);
      if (nl != std::string::npos) {
        std::string out = buffer_.substr(0, nl);
        if (!out.empty() && out.back() == '\r') out.pop_back();
        buffer_.erase(0, nl + 1);
        return out;
      }
      searched = buffer_.size();
      fill(deadline, what);
    }
  }

 private:
  void fill(Deadline deadline, std::string_view what) {
    auto remaining =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (remaining <= 0) throw Error("timeout while reading " + std::string(what));
    struct pollfd p{fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(remaining, 1000)));
    if (rc < 0) {
      if (errno == EINTR) return;
      throw Error(std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) return;  // re-check the deadline
    char chunk[4096];
    ssize_t n = ::read(fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) return;
      throw Error(std::string("read from child: ") + std::strerror(errno));
    }
    if (n == 0) throw Error("child closed its output while reading " + std::string(what));
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }

  int fd_;
  std::string buffer_;
};

// ============================================================================
// run_command
// ============================================================================

struct CommandResult {
  int exit_code = -1;
  bool timed_out = false;
};

/** Run `command` under /bin/sh in `cwd`, discarding output. On timeout the
 *  child is killed and timed_out is set; the caller decides what that means. */
inline CommandResult run_command(const std::string& command, const std::filesystem::path& cwd,
                                 double timeout_s) {
  Child child = Child::spawn(command, cwd, /*capture_output=*/false);
  child.close_stdin();
  CommandResult result;
  if (!child.wait_until(Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(timeout_s)))) {
    child.kill_now();
    result.timed_out = true;
    result.exit_code = child.exit_code();
    return result;
  }
  result.exit_code = child.wait();
  return result;
}

}  // namespace mgd::subprocess
