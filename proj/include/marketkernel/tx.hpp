// Containers with an undo log, so a command can mutate state in place and
// still be rolled back if it fails halfway. Reads look like std::map /
// std::vector; every write goes through a method that records the prior value
// while a transaction is open.

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mk {

template <class K, class V>
class TxMap {
public:
    using map_type = std::map<K, V>;
    using const_iterator = typename map_type::const_iterator;

    const V& at(const K& k) const { return m_.at(k); }
    const_iterator find(const K& k) const { return m_.find(k); }
    bool contains(const K& k) const { return m_.contains(k); }
    const_iterator begin() const { return m_.begin(); }
    const_iterator end() const { return m_.end(); }
    std::size_t size() const { return m_.size(); }
    bool empty() const { return m_.empty(); }
    const map_type& raw() const { return m_; }

    /// Mutable access to an existing value. Throws std::out_of_range.
    V& mut(const K& k) {
        auto it = m_.find(k);
        if (it == m_.end()) throw std::out_of_range("TxMap::mut");
        remember(k, it->second);
        return it->second;
    }

    /// Mutable access, default-constructing the value if absent.
    V& slot(const K& k) {
        auto it = m_.find(k);
        if (it == m_.end()) {
            remember(k, std::nullopt);
            return m_.emplace(k, V{}).first->second;
        }
        remember(k, it->second);
        return it->second;
    }

    V& put(const K& k, V v) { return slot(k) = std::move(v); }

    void begin_tx() {
        undo_.clear();
        open_ = true;
    }
    void commit() {
        undo_.clear();
        open_ = false;
    }
    void rollback() {
        for (auto it = undo_.rbegin(); it != undo_.rend(); ++it) {
            if (it->second) m_.insert_or_assign(it->first, std::move(*it->second));
            else m_.erase(it->first);
        }
        commit();
    }

private:
    void remember(const K& k, std::optional<V> old) {
        if (open_) undo_.emplace_back(k, std::move(old));
    }

    map_type m_;
    std::vector<std::pair<K, std::optional<V>>> undo_;
    bool open_ = false;
};

/// Append-only vector; rollback truncates to the length at begin_tx().
template <class T>
class TxLog {
public:
    using const_iterator = typename std::vector<T>::const_iterator;

    const T& operator[](std::size_t i) const { return v_[i]; }
    const T& back() const { return v_.back(); }
    const_iterator begin() const { return v_.begin(); }
    const_iterator end() const { return v_.end(); }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }
    const std::vector<T>& raw() const { return v_; }

    void push_back(T t) { v_.push_back(std::move(t)); }

    void begin_tx() { mark_ = v_.size(); }
    void commit() { mark_.reset(); }
    void rollback() {
        if (mark_) v_.resize(*mark_);
        mark_.reset();
    }

private:
    std::vector<T> v_;
    std::optional<std::size_t> mark_;
};

}  // namespace mk
