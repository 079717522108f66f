#include "continuum/msgbus/tcp_broker.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <nlohmann/json.hpp>

#include "continuum/common/base64.hpp"
#include "continuum/common/error.hpp"

namespace continuum::bus {
namespace {

// Upper bound on a frame body: a 16 MiB payload in base64 plus envelope.
constexpr std::uint32_t kMaxFrameBody = 24u * 1024 * 1024;

bool write_all(int fd, const char* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

bool read_exact(int fd, char* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::recv(fd, data, len, 0);
    if (n == 0) return false;
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

// Returns false on EOF or error.
bool read_frame(int fd, WireFrame& out) {
  unsigned char header[4];
  if (!read_exact(fd, reinterpret_cast<char*>(header), 4)) return false;
  const std::uint32_t len = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                            (std::uint32_t{header[2]} << 8) | header[3];
  if (len > kMaxFrameBody) return false;
  std::string body(len, '\0');
  if (!read_exact(fd, body.data(), len)) return false;
  out = decode_frame_body(body);
  return true;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

std::string encode_frame(const WireFrame& frame) {
  const nlohmann::json j = {{"type", frame.type},
                            {"topic", frame.topic},
                            {"payload_b64", base64_encode(frame.payload)},
                            {"sender", frame.sender},
                            {"msg_id", frame.msg_id}};
  const std::string body = j.dump();
  if (body.size() > kMaxFrameBody) throw BusError("frame exceeds maximum size");
  const auto len = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out += static_cast<char>((len >> 24) & 0xFF);
  out += static_cast<char>((len >> 16) & 0xFF);
  out += static_cast<char>((len >> 8) & 0xFF);
  out += static_cast<char>(len & 0xFF);
  out += body;
  return out;
}

WireFrame decode_frame_body(std::string_view body) {
  try {
    const auto j = nlohmann::json::parse(body);
    WireFrame f;
    f.type = j.at("type").get<std::string>();
    if (f.type != "pub" && f.type != "sub" && f.type != "ack") {
      throw BusError("unknown frame type '" + f.type + "'");
    }
    f.topic = j.value("topic", "");
    f.payload = base64_decode(j.value("payload_b64", ""));
    f.sender = j.value("sender", "");
    f.msg_id = j.value("msg_id", std::uint64_t{0});
    return f;
  } catch (const BusError&) {
    throw;
  } catch (const std::exception& e) {
    throw BusError(std::string("malformed frame: ") + e.what());
  }
}

// ---------------------------------------------------------------- server

struct TcpBrokerServer::Connection {
  int fd = -1;
  std::vector<TopicFilter> filters;
  bool alive = true;

  bool send(const std::string& bytes) const { return alive && write_all(fd, bytes.data(), bytes.size()); }
};

TcpBrokerServer::TcpBrokerServer(std::uint16_t port, std::string bind_address) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw BusError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw BusError("invalid bind address " + bind_address);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw BusError("cannot listen on " + bind_address + ":" + std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpBrokerServer::~TcpBrokerServer() { stop(); }

void TcpBrokerServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(mutex_);
    for (auto& c : connections_) ::shutdown(c->fd, SHUT_RDWR);
  }
  for (auto& t : readers_) {
    if (t.joinable()) t.join();
  }
  for (auto& c : connections_) ::close(c->fd);
  connections_.clear();
}

void TcpBrokerServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    set_nodelay(fd);
    std::lock_guard lock(mutex_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    connections_.push_back(conn);
    readers_.emplace_back([this, conn] { serve(conn); });
  }
}

void TcpBrokerServer::serve(const std::shared_ptr<Connection>& conn) {
  WireFrame frame;
  while (true) {
    try {
      if (!read_frame(conn->fd, frame)) break;
    } catch (const BusError&) {
      break;
    }
    std::lock_guard lock(mutex_);
    if (frame.type == "sub") {
      try {
        conn->filters.emplace_back(frame.topic);
      } catch (const std::invalid_argument&) {
        // Invalid filters are acknowledged but never match.
      }
      conn->send(encode_frame({"ack", frame.topic, {}, "", frame.msg_id}));
    } else if (frame.type == "pub") {
      const MsgId id = ++next_msg_id_;
      std::string out;
      try {
        const Topic topic(frame.topic);
        out = encode_frame({"pub", frame.topic, std::move(frame.payload), frame.sender, id});
        for (const auto& c : connections_) {
          const bool match = std::any_of(c->filters.begin(), c->filters.end(),
                                         [&](const TopicFilter& f) { return topic_matches(f, topic); });
          if (match && !c->send(out)) c->alive = false;
        }
      } catch (const std::invalid_argument&) {
        // Unroutable topic: acknowledged and dropped.
      }
      conn->send(encode_frame({"ack", frame.topic, {}, "", id}));
    }
  }
  std::lock_guard lock(mutex_);
  conn->alive = false;
  conn->filters.clear();
}

// ---------------------------------------------------------------- client

TcpBroker::TcpBroker(const std::string& host, std::uint16_t port)
    : epoch_(std::chrono::steady_clock::now()) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw BusError("cannot resolve " + host);
  }
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const bool ok = fd_ >= 0 && ::connect(fd_, res->ai_addr, res->ai_addrlen) == 0;
  ::freeaddrinfo(res);
  if (!ok) {
    const std::string err = std::strerror(errno);
    if (fd_ >= 0) ::close(fd_);
    throw BusError("cannot connect to broker at " + host + ":" + std::to_string(port) + ": " + err);
  }
  set_nodelay(fd_);
  reader_ = std::thread([this] { read_loop(); });
  dispatcher_ = std::thread([this] { dispatch_loop(); });
}

TcpBroker::~TcpBroker() { shutdown(); }

void TcpBroker::shutdown() {
  if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  if (reader_.joinable()) reader_.join();
  {
    std::lock_guard lock(mutex_);
    stop_dispatch_ = true;
  }
  cv_.notify_all();
  if (dispatcher_.joinable()) dispatcher_.join();
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  idle_cv_.notify_all();
}

Millis TcpBroker::now() const {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                               epoch_)
      .count();
}

std::uint64_t TcpBroker::request(const WireFrame& frame) {
  if (closed_) throw BusError("broker connection is closed");
  const std::string bytes = encode_frame(frame);
  std::future<std::uint64_t> ack;
  {
    std::lock_guard lock(mutex_);
    ++outstanding_;
  }
  {
    std::lock_guard wlock(write_mutex_);
    bool queued = false;
    {
      // The reader sets closed_ before clearing pending_acks_, so a promise
      // queued while closed_ is false is always resolved or broken.
      std::lock_guard alock(acks_mutex_);
      if (!closed_) {
        pending_acks_.emplace_back();
        ack = pending_acks_.back().get_future();
        queued = true;
      }
    }
    // On a failed write the socket is dead; the reader then breaks the promise.
    if (queued && !write_all(fd_, bytes.data(), bytes.size())) ::shutdown(fd_, SHUT_RDWR);
  }
  std::uint64_t result = 0;
  std::exception_ptr err;
  if (!ack.valid()) {
    err = std::make_exception_ptr(BusError("write to broker failed"));
  } else {
    try {
      result = ack.get();
    } catch (const std::future_error&) {
      err = std::make_exception_ptr(BusError("broker connection lost before acknowledgement"));
    }
  }
  {
    std::lock_guard lock(mutex_);
    --outstanding_;
  }
  idle_cv_.notify_all();
  if (err) std::rethrow_exception(err);
  return result;
}

SubscriptionId TcpBroker::subscribe(const NodeId& node, const TopicFilter& filter, Handler handler) {
  if (closed_) throw BusError("broker connection is closed");
  SubscriptionId id = 0;
  {
    std::lock_guard lock(mutex_);
    id = ++next_sub_id_;
    subs_.emplace(id, Subscription{node, filter, std::make_shared<Handler>(std::move(handler))});
  }
  request({"sub", filter.str(), {}, node.str(), id});
  return id;
}

void TcpBroker::unsubscribe(SubscriptionId id) {
  std::lock_guard lock(mutex_);
  subs_.erase(id);
}

MsgId TcpBroker::publish(const NodeId& sender, const Topic& topic, Bytes payload) {
  check_payload(payload.size());
  auto shared = std::make_shared<const Bytes>(std::move(payload));
  const MsgId id = request({"pub", topic.str(), *shared, sender.str(), 0});
  notify_published(Envelope{id, topic, shared, now(), sender});
  return id;
}

void TcpBroker::schedule_after(Millis delay_ms, std::function<void()> fn) {
  if (delay_ms < 0) throw std::invalid_argument("delay must be >= 0");
  {
    std::lock_guard lock(mutex_);
    timers_.push_back({now() + delay_ms, next_timer_seq_++, std::move(fn)});
  }
  cv_.notify_all();
}

void TcpBroker::read_loop() {
  WireFrame frame;
  while (true) {
    try {
      if (!read_frame(fd_, frame)) break;
    } catch (const BusError&) {
      break;
    }
    if (frame.type == "ack") {
      std::lock_guard alock(acks_mutex_);
      if (!pending_acks_.empty()) {
        pending_acks_.front().set_value(frame.msg_id);
        pending_acks_.pop_front();
      }
      continue;
    }
    if (frame.type != "pub") continue;
    std::shared_ptr<Envelope> env;
    try {
      env = std::make_shared<Envelope>(Envelope{frame.msg_id, Topic(frame.topic),
                                                std::make_shared<const Bytes>(std::move(frame.payload)),
                                                now(), NodeId::parse(frame.sender)});
    } catch (const std::invalid_argument&) {
      continue;
    }
    {
      std::lock_guard lock(mutex_);
      for (const auto& [id, sub] : subs_) {
        if (!topic_matches(sub.filter, env->topic)) continue;
        ready_.push_back([this, id = id, handler = sub.handler, env] {
          bool live = false;
          {
            std::lock_guard inner(mutex_);
            live = subs_.count(id) > 0;
          }
          if (live) (*handler)(*env);
        });
      }
    }
    cv_.notify_all();
  }
  closed_ = true;
  std::lock_guard alock(acks_mutex_);
  pending_acks_.clear();  // breaks the promises; waiters see BusError
}

bool TcpBroker::idle_locked() const {
  return ready_.empty() && timers_.empty() && !busy_ && outstanding_ == 0;
}

void TcpBroker::dispatch_loop() {
  std::unique_lock lock(mutex_);
  while (true) {
    std::function<void()> task;
    if (!ready_.empty()) {
      task = std::move(ready_.front());
      ready_.pop_front();
    } else if (!timers_.empty()) {
      auto earliest = std::min_element(timers_.begin(), timers_.end(), [](const Timer& a, const Timer& b) {
        return a.due != b.due ? a.due < b.due : a.seq < b.seq;
      });
      const Millis wait = earliest->due - now();
      if (wait <= 0) {
        task = std::move(earliest->fn);
        timers_.erase(earliest);
      } else if (stop_dispatch_) {
        return;
      } else {
        cv_.wait_for(lock, std::chrono::milliseconds(wait));
        continue;
      }
    } else if (stop_dispatch_) {
      return;
    } else {
      idle_cv_.notify_all();
      cv_.wait(lock);
      continue;
    }
    busy_ = true;
    lock.unlock();
    try {
      task();
    } catch (...) {
      std::lock_guard guard(mutex_);
      if (!handler_error_) handler_error_ = std::current_exception();
    }
    lock.lock();
    busy_ = false;
    if (idle_locked()) idle_cv_.notify_all();
  }
}

Millis TcpBroker::run_until_idle() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return idle_locked() || handler_error_ || stop_dispatch_; });
  if (handler_error_) {
    auto err = handler_error_;
    handler_error_ = nullptr;
    std::rethrow_exception(err);
  }
  return now();
}

}  // namespace continuum::bus
