#pragma once

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>

namespace emlio {

// Blocking bounded MPMC queue. close() wakes all waiters; pop() returns
// nullopt once the queue is closed and drained.
template <typename T>
class BoundedQueue {
  public:
    explicit BoundedQueue(size_t capacity) : cap_(capacity) {}

    // Returns false if the queue was closed while waiting.
    bool push(T item) {
        std::unique_lock lk(mu_);
        not_full_.wait(lk, [&] { return items_.size() < cap_ || closed_; });
        if (closed_) {
            return false;
        }
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lk(mu_);
        not_empty_.wait(lk, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) {
            return std::nullopt;
        }
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lk(mu_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    size_t size() const {
        std::lock_guard lk(mu_);
        return items_.size();
    }

  private:
    mutable std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    size_t cap_;
    bool closed_ = false;
};

}  // namespace emlio
