#pragma once

#include <cerrno>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "redsample/errors.hpp"
#include "redsample/image.hpp"
#include "redsample/io.hpp"

namespace redsample {

/// External denoiser reached through a subprocess, one process per call.
///
/// Parent writes an RFI1 frame followed by "nu=<value>\n" on the child's stdin;
/// the child answers with one RFI1 frame of identical shape on stdout. Any
/// nonzero exit, malformed or mis-shaped frame, or non-finite value is a
/// DenoiserFailure carrying the child's stderr tail.
class PluginDenoiser {
 public:
  PluginDenoiser(std::string executable, double nu, std::vector<std::string> args = {})
      : executable_(std::move(executable)), args_(std::move(args)), nu_(nu) {
    if (executable_.empty()) throw RejectedInput("PluginDenoiser: empty executable path");
    if (!(nu_ >= 0.0)) throw RejectedInput("PluginDenoiser: strength must be nonnegative");
  }

  const std::string& executable() const noexcept { return executable_; }
  double strength() const noexcept { return nu_; }
  PluginDenoiser with_strength(double nu) const { return PluginDenoiser(executable_, nu, args_); }

  ImageField apply(const ImageField& x) const {
    std::ostringstream nu_line;
    nu_line.precision(17);
    nu_line << "nu=" << nu_ << '\n';
    const std::string request = io::encode_rfi(x) + nu_line.str();
    const Exchange ex = exchange(request);
    if (ex.exit_status != 0) {
      throw DenoiserFailure("plugin '" + executable_ + "' exited with status " + std::to_string(ex.exit_status) +
                            diagnostics(ex.err));
    }
    std::istringstream is(ex.out, std::ios::binary);
    ImageField out;
    try {
      out = io::read_rfi(is);
    } catch (const RejectedInput& e) {
      throw DenoiserFailure("plugin '" + executable_ + "' protocol violation: " + e.what() + diagnostics(ex.err));
    }
    if (!(out.shape() == x.shape())) {
      throw DenoiserFailure("plugin '" + executable_ + "' returned shape " + out.shape().str() + ", expected " +
                            x.shape().str());
    }
    if (is.peek() != std::char_traits<char>::eof()) {
      throw DenoiserFailure("plugin '" + executable_ + "' wrote trailing bytes after the frame");
    }
    return out;
  }

 private:
  struct Exchange {
    std::string out;
    std::string err;
    int exit_status = -1;
  };

  static std::string diagnostics(const std::string& err) {
    if (err.empty()) return "";
    constexpr std::size_t tail = 2000;
    return "; stderr: " + (err.size() > tail ? err.substr(err.size() - tail) : err);
  }

  // Sockets rather than pipes so a child that exits early yields EPIPE via
  // MSG_NOSIGNAL instead of a SIGPIPE in the parent.
  Exchange exchange(const std::string& request) const {
    int in_fds[2], out_fds[2], err_fds[2];
    if (socketpair(AF_UNIX, SOCK_STREAM, 0, in_fds) != 0) throw DenoiserFailure("socketpair failed");
    if (socketpair(AF_UNIX, SOCK_STREAM, 0, out_fds) != 0) {
      close_pair(in_fds);
      throw DenoiserFailure("socketpair failed");
    }
    if (socketpair(AF_UNIX, SOCK_STREAM, 0, err_fds) != 0) {
      close_pair(in_fds);
      close_pair(out_fds);
      throw DenoiserFailure("socketpair failed");
    }

    std::vector<std::string> argv_storage{executable_};
    argv_storage.insert(argv_storage.end(), args_.begin(), args_.end());
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());
    argv.push_back(nullptr);

    const pid_t pid = fork();
    if (pid < 0) {
      close_pair(in_fds);
      close_pair(out_fds);
      close_pair(err_fds);
      throw DenoiserFailure("fork failed: " + std::string(std::strerror(errno)));
    }
    if (pid == 0) {
      dup2(in_fds[1], STDIN_FILENO);
      dup2(out_fds[1], STDOUT_FILENO);
      dup2(err_fds[1], STDERR_FILENO);
      close_pair(in_fds);
      close_pair(out_fds);
      close_pair(err_fds);
      execv(executable_.c_str(), argv.data());
      const char msg[] = "exec failed\n";
      [[maybe_unused]] auto r = write(STDERR_FILENO, msg, sizeof(msg) - 1);
      _exit(127);
    }
    close(in_fds[1]);
    close(out_fds[1]);
    close(err_fds[1]);

    Exchange ex;
    int to_child = in_fds[0], from_child = out_fds[0], err_child = err_fds[0];
    std::size_t written = 0;
    char buf[65536];
    while (from_child >= 0 || err_child >= 0) {
      pollfd fds[3];
      nfds_t n = 0;
      int idx_in = -1, idx_out = -1, idx_err = -1;
      if (to_child >= 0) {
        idx_in = static_cast<int>(n);
        fds[n++] = {to_child, POLLOUT, 0};
      }
      if (from_child >= 0) {
        idx_out = static_cast<int>(n);
        fds[n++] = {from_child, POLLIN, 0};
      }
      if (err_child >= 0) {
        idx_err = static_cast<int>(n);
        fds[n++] = {err_child, POLLIN, 0};
      }
      if (poll(fds, n, -1) < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (idx_in >= 0 && fds[idx_in].revents) {
        const ssize_t k = send(to_child, request.data() + written, request.size() - written, MSG_NOSIGNAL);
        if (k > 0) written += static_cast<std::size_t>(k);
        if (k < 0 || written == request.size()) {
          shutdown(to_child, SHUT_WR);
          close(to_child);
          to_child = -1;
        }
      }
      if (idx_out >= 0 && fds[idx_out].revents) drain(from_child, ex.out, buf, sizeof(buf));
      if (idx_err >= 0 && fds[idx_err].revents) drain(err_child, ex.err, buf, sizeof(buf));
    }
    if (to_child >= 0) close(to_child);

    int status = 0;
    while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    if (WIFEXITED(status)) {
      ex.exit_status = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
      ex.exit_status = 128 + WTERMSIG(status);
    }
    if (written != request.size() && ex.exit_status == 0) {
      ex.exit_status = -1;
      ex.err += "child closed stdin before reading the full request";
    }
    return ex;
  }

  static void drain(int& fd, std::string& sink, char* buf, std::size_t cap) {
    const ssize_t k = read(fd, buf, cap);
    if (k > 0) {
      sink.append(buf, static_cast<std::size_t>(k));
    } else if (k == 0 || (errno != EINTR && errno != EAGAIN)) {
      close(fd);
      fd = -1;
    }
  }

  static void close_pair(int fds[2]) {
    close(fds[0]);
    close(fds[1]);
  }

  std::string executable_;
  std::vector<std::string> args_;
  double nu_;
};

}  // namespace redsample
