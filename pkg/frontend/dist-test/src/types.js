/** Wire shapes of the recommendation service's JSON API. */
export {};
//# sourceMappingURL=types.js.map